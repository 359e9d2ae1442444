#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pisco/eval.hpp"
#include "pisco/kspace.hpp"
#include "pisco/nik.hpp"

namespace pisco::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void write_header(std::ofstream& os, const char (&magic)[5], const json& header) {
    const std::string text = header.dump();
    const auto len = static_cast<std::uint32_t>(text.size());
    os.write(magic, 4);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline json read_header(std::ifstream& is, const char (&magic)[5], const fs::path& path) {
    char m[4];
    std::uint32_t len = 0;
    if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) throw IoError(path.string() + ": bad magic");
    if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 24))
        throw IoError(path.string() + ": bad header length");
    std::string text(len, '\0');
    if (!is.read(text.data(), len)) throw IoError(path.string() + ": truncated header");
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed header: " + e.what());
    }
}

inline void write_floats(std::ofstream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_floats(std::ifstream& is, std::size_t n, const fs::path& path) {
    std::vector<float> v(n);
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw IoError(path.string() + ": truncated payload");
    return v;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

inline std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return is;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// k-space / image container
//
// "KSPC", u32 header length, JSON header, then float32 (re, im) values
// [sample][coil], then float32 coords [sample][dim] with dim = 3 (kx, ky, t).

inline void write_kspace(const fs::path& path, const MultiCoilKSpace& k, const json& extra = json::object()) {
    k.validate();
    json h = extra;
    h["n_samples"] = k.n_samples();
    h["n_coils"] = k.n_coils();
    h["n_fe"] = k.n_fe;
    h["dim"] = 3;
    h["dtype"] = "c64";
    if (!h.contains("kind")) h["kind"] = "kspace";
    auto os = detail::open_out(path);
    detail::write_header(os, "KSPC", h);
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(k.values.size()) * 2);
    for (Eigen::Index i = 0; i < k.n_samples(); ++i)
        for (Eigen::Index c = 0; c < k.n_coils(); ++c) {
            v.push_back(static_cast<float>(k.values(i, c).real()));
            v.push_back(static_cast<float>(k.values(i, c).imag()));
        }
    detail::write_floats(os, v);
    v.clear();
    for (const Coord& c : k.coords) {
        v.push_back(static_cast<float>(c.kx));
        v.push_back(static_cast<float>(c.ky));
        v.push_back(static_cast<float>(c.t));
    }
    detail::write_floats(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

struct KSpaceFile {
    MultiCoilKSpace data;
    json header;
};

inline KSpaceFile read_kspace(const fs::path& path) {
    auto is = detail::open_in(path);
    KSpaceFile f;
    f.header = detail::read_header(is, "KSPC", path);
    try {
        const auto n = f.header.at("n_samples").get<std::size_t>();
        const auto nc = f.header.at("n_coils").get<Eigen::Index>();
        if (f.header.at("dim").get<int>() != 3 || f.header.at("dtype").get<std::string>() != "c64")
            throw IoError(path.string() + ": unsupported layout");
        f.data.n_fe = f.header.at("n_fe").get<int>();
        const auto v = detail::read_floats(is, n * static_cast<std::size_t>(nc) * 2, path);
        f.data.values.resize(static_cast<Eigen::Index>(n), nc);
        std::size_t p = 0;
        for (Eigen::Index i = 0; i < f.data.values.rows(); ++i)
            for (Eigen::Index c = 0; c < nc; ++c, p += 2) f.data.values(i, c) = cdouble(v[p], v[p + 1]);
        const auto k = detail::read_floats(is, n * 3, path);
        f.data.coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) f.data.coords[i] = {k[3 * i], k[3 * i + 1], k[3 * i + 2]};
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": header field error: " + e.what());
    }
    return f;
}

/// Images use the same container: one coil, one sample per pixel in grid order,
/// coordinates are pixel positions in FOV units.
inline void write_image(const fs::path& path, const ComplexImage& img, double t = 0.0) {
    MultiCoilKSpace k;
    k.n_fe = static_cast<int>(img.rows());
    k.values = Eigen::Map<const Eigen::VectorXcd>(img.data(), img.size());
    k.coords.reserve(static_cast<std::size_t>(img.size()));
    for (Eigen::Index y = 0; y < img.cols(); ++y)
        for (Eigen::Index x = 0; x < img.rows(); ++x)
            k.coords.push_back({pixel_position(static_cast<int>(x), static_cast<int>(img.rows())),
                                pixel_position(static_cast<int>(y), static_cast<int>(img.cols())), t});
    write_kspace(path, k, {{"kind", "image"}, {"shape", {img.rows(), img.cols()}}});
}

inline ComplexImage read_image(const fs::path& path) {
    const auto f = read_kspace(path);
    if (f.header.value("kind", "") != "image" || !f.header.contains("shape"))
        throw IoError(path.string() + ": not an image container");
    const auto shape = f.header.at("shape").get<std::array<Eigen::Index, 2>>();
    if (shape[0] * shape[1] != f.data.n_samples() || f.data.n_coils() != 1)
        throw IoError(path.string() + ": image shape mismatch");
    return Eigen::Map<const ComplexImage>(f.data.values.data(), shape[0], shape[1]);
}

// ---------------------------------------------------------------------------
// Sampling mask (JSON)

inline json mask_to_json(const SamplingMask& m) {
    std::vector<int> lines;
    for (int y = 0; y < m.n_y(); ++y)
        if (m.kept(0, y)) lines.push_back(y);
    return {{"n_x", m.n_x()},
            {"n_y", m.n_y()},
            {"acceleration", m.acceleration},
            {"center_fraction", m.center_fraction},
            {"lines", lines}};
}

inline SamplingMask mask_from_json(const json& j) {
    SamplingMask m;
    const int nx = j.at("n_x").get<int>(), ny = j.at("n_y").get<int>();
    if (nx < 1 || ny < 1) throw InvalidArgument("mask: non-positive size");
    m.kept = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx, ny, false);
    for (int y : j.at("lines").get<std::vector<int>>()) {
        if (y < 0 || y >= ny) throw InvalidArgument("mask: line index out of range");
        m.kept.col(y).setConstant(true);
    }
    m.acceleration = j.value("acceleration", 0.0);
    m.center_fraction = j.value("center_fraction", 0.0);
    return m;
}

inline void write_json(const fs::path& path, const json& j) {
    auto os = detail::open_out(path);
    os << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    auto is = detail::open_in(path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// NIK checkpoint
//
// "NIKC", u32 header length, JSON header, then float32 B (n_features x 3,
// column-major) followed by the flat parameter vector (per layer: W out x in
// column-major, then b).

inline json architecture_to_json(const NikArchitecture& a) {
    return {{"n_features", a.n_features}, {"sigma", a.sigma}, {"hidden", a.hidden},
            {"layers", a.layers},         {"omega", a.omega}, {"n_coils", a.n_coils}};
}

inline NikArchitecture architecture_from_json(const json& j) {
    NikArchitecture a;
    a.n_features = j.at("n_features").get<int>();
    a.sigma = j.at("sigma").get<double>();
    a.hidden = j.at("hidden").get<int>();
    a.layers = j.at("layers").get<int>();
    a.omega = j.at("omega").get<double>();
    a.n_coils = j.at("n_coils").get<int>();
    return a;
}

inline void write_checkpoint(const fs::path& path, const NikModel& model, const json& extra = json::object()) {
    json h = extra;
    h["architecture"] = architecture_to_json(model.architecture());
    h["seed"] = model.seed();
    h["n_params"] = model.n_params();
    h["layout"] = "B[n_features x 3], then per layer W[out x in] (column-major), b[out]; float32";
    auto os = detail::open_out(path);
    detail::write_header(os, "NIKC", h);
    const auto& B = model.encoding().frequencies();
    std::vector<float> v(B.data(), B.data() + B.size());
    v.insert(v.end(), model.params().data(), model.params().data() + model.n_params());
    detail::write_floats(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

struct Checkpoint {
    NikModel model;
    json header;
};

inline Checkpoint read_checkpoint(const fs::path& path) {
    auto is = detail::open_in(path);
    Checkpoint c;
    c.header = detail::read_header(is, "NIKC", path);
    try {
        const NikArchitecture a = architecture_from_json(c.header.at("architecture"));
        a.validate();
        const auto nb = static_cast<std::size_t>(a.n_features) * 3;
        const auto np = c.header.at("n_params").get<std::size_t>();
        const auto v = detail::read_floats(is, nb + np, path);
        Eigen::MatrixXd B(a.n_features, 3);
        for (std::size_t i = 0; i < nb; ++i) B.data()[i] = v[i];
        Eigen::VectorXd p(static_cast<Eigen::Index>(np));
        for (std::size_t i = 0; i < np; ++i) p[static_cast<Eigen::Index>(i)] = v[nb + i];
        c.model = NikModel(a, FeatureEncoding(B), std::move(p), c.header.at("seed").get<std::uint64_t>());
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": header field error: " + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest round-trip-safe text for a double ("%.17g").
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& columns) : os_(detail::open_out(path)) {
        row_strings(columns);
    }

    template <typename... Ts>
    void row(const Ts&... cells) {
        std::vector<std::string> s{cell(cells)...};
        row_strings(s);
    }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return fmt(v); }
    template <typename T>
        requires std::is_integral_v<T>
    static std::string cell(T v) {
        return std::to_string(v);
    }

    void row_strings(const std::vector<std::string>& s) {
        for (std::size_t i = 0; i < s.size(); ++i) os_ << (i ? "," : "") << s[i];
        os_ << '\n';
    }

    std::ofstream os_;
};

inline void write_history(const fs::path& path, std::span<const HistoryRow> rows) {
    CsvWriter w(path, {"epoch", "dc", "pisco", "total"});
    for (const auto& r : rows) w.row(r.epoch, r.dc, r.pisco, r.total);
}

// ---------------------------------------------------------------------------
// PNG

/// 8-bit RGB raster, row-major, origin top-left.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Raster() = default;
    Raster(int w, int h, std::uint8_t fill = 255)
        : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

    void set(int x, int y, std::array<std::uint8_t, 3> c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        std::memcpy(&rgb[(static_cast<std::size_t>(y) * width + x) * 3], c.data(), 3);
    }
};

inline void write_png(const fs::path& path, const Raster& r) {
    if (r.width < 1 || r.height < 1) throw InvalidArgument("png: empty raster");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png write failed: " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < r.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&r.rgb[static_cast<std::size_t>(y) * r.width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

/// Grayscale PNG of values in [0, 1]; image x runs along PNG columns, y along rows.
inline void write_gray_png(const fs::path& path, const RealImage& img) {
    Raster r(static_cast<int>(img.rows()), static_cast<int>(img.cols()));
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x) {
            const auto v = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(img(x, y), 0.0, 1.0)));
            r.set(x, y, {v, v, v});
        }
    write_png(path, r);
}

/// Magnitude PNG after metric normalization (99th-percentile clip, [0, 1]).
inline void write_magnitude_png(const fs::path& path, const ComplexImage& img) {
    write_gray_png(path, normalize_for_metrics(img));
}

/// Min-max scaled heatmap of an arbitrary real matrix (e.g. stacked weights).
inline void write_heatmap_png(const fs::path& path, const RealImage& m) {
    const double lo = m.minCoeff(), hi = m.maxCoeff();
    write_gray_png(path, hi > lo ? RealImage((m.array() - lo) / (hi - lo)) : RealImage::Zero(m.rows(), m.cols()));
}

struct Series {
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal line plot: framed axes, one colored polyline per series with a dot
/// at every sample. No text.
inline Raster line_plot(std::span<const Series> series, int width = 480, int height = 320) {
    constexpr int kPad = 24;
    constexpr std::array<std::array<std::uint8_t, 3>, 4> kColors{{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}}};
    Raster r(width, height);
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw InvalidArgument("line_plot: x/y length mismatch");
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (!(x1 > x0)) x1 = x0 + 1.0;
    if (!(y1 > y0)) y1 = y0 + 1.0;
    const int pw = width - 2 * kPad, ph = height - 2 * kPad;
    auto px = [&](double v) { return kPad + static_cast<int>(std::lround((v - x0) / (x1 - x0) * pw)); };
    auto py = [&](double v) { return height - kPad - static_cast<int>(std::lround((v - y0) / (y1 - y0) * ph)); };
    auto line = [&](int xa, int ya, int xb, int yb, std::array<std::uint8_t, 3> c) {
        const int dx = std::abs(xb - xa), dy = -std::abs(yb - ya);
        const int sx = xa < xb ? 1 : -1, sy = ya < yb ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            r.set(xa, ya, c);
            if (xa == xb && ya == yb) break;
            const int e2 = 2 * err;
            if (e2 >= dy) err += dy, xa += sx;
            if (e2 <= dx) err += dx, ya += sy;
        }
    };
    const std::array<std::uint8_t, 3> black{0, 0, 0};
    line(kPad, kPad, kPad, height - kPad, black);
    line(kPad, height - kPad, width - kPad, height - kPad, black);
    line(width - kPad, kPad, width - kPad, height - kPad, black);
    line(kPad, kPad, width - kPad, kPad, black);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto c = kColors[k % kColors.size()];
        const auto& s = series[k];
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const int xa = px(s.x[i]), ya = py(s.y[i]);
            for (int d = -2; d <= 2; ++d) r.set(xa + d, ya, c), r.set(xa, ya + d, c);
            if (i > 0) line(px(s.x[i - 1]), py(s.y[i - 1]), xa, ya, c);
        }
    }
    return r;
}

}  // namespace pisco::io
