#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pisco/types.hpp"

namespace pisco {

/// Complex samples at explicit k-space coordinates, one column per coil.
struct MultiCoilKSpace {
    std::vector<Coord> coords;
    Eigen::MatrixXcd values;  // n_samples x n_coils
    int n_fe = 0;

    Eigen::Index n_samples() const { return values.rows(); }
    Eigen::Index n_coils() const { return values.cols(); }

    void validate() const {
        if (static_cast<Eigen::Index>(coords.size()) != values.rows())
            throw InvalidArgument("k-space: coordinate count does not match value rows");
        if (values.cols() < 1) throw InvalidArgument("k-space: at least one coil required");
        if (!values.allFinite()) throw InvalidArgument("k-space: non-finite values");
    }
};

// ---------------------------------------------------------------------------
// Trajectories

enum class TrajectoryKind { CartesianGrid, RadialGoldenAngle, RadialUniform };

/// Radial golden angle, pi * (sqrt(5) - 1) / 2 (about 111.246 degrees).
inline constexpr double kGoldenAngle = std::numbers::pi * (std::numbers::phi - 1.0);

struct Trajectory {
    TrajectoryKind kind = TrajectoryKind::RadialGoldenAngle;
    int n_spokes = 1;
    int n_fe = 2;
    double angle_increment = kGoldenAngle;

    static Trajectory golden_angle(int n_spokes, int n_fe) {
        return {TrajectoryKind::RadialGoldenAngle, n_spokes, n_fe, kGoldenAngle};
    }
    static Trajectory uniform(int n_spokes, int n_fe) {
        return {TrajectoryKind::RadialUniform, n_spokes, n_fe,
                std::numbers::pi / std::max(n_spokes, 1)};
    }
};

/// Cartesian grid nodes (m / n_x - 0.5, n / n_y - 0.5, t), k_x varying fastest.
inline std::vector<Coord> make_cartesian_grid(int n_x, int n_y, double t = 0.0) {
    if (n_x < 2 || n_y < 2) throw InvalidArgument("grid dimensions must be at least 2");
    std::vector<Coord> out;
    out.reserve(static_cast<std::size_t>(n_x) * n_y);
    for (int n = 0; n < n_y; ++n)
        for (int m = 0; m < n_x; ++m)
            out.push_back({static_cast<double>(m) / n_x - 0.5, static_cast<double>(n) / n_y - 0.5, t});
    return out;
}

/// Radial spokes through the origin. Spoke j has angle j * angle_increment and
/// is assigned to frame j mod n_frames; t = frame / max(n_frames - 1, 1).
inline std::vector<Coord> make_radial_trajectory(const Trajectory& traj, int n_frames = 1) {
    if (traj.n_spokes < 1) throw InvalidArgument("radial trajectory needs at least one spoke");
    if (traj.n_fe < 2) throw InvalidArgument("radial trajectory needs n_fe >= 2");
    if (n_frames < 1) throw InvalidArgument("radial trajectory needs at least one frame");
    if (traj.kind == TrajectoryKind::CartesianGrid)
        throw InvalidArgument("make_radial_trajectory called with a Cartesian trajectory");
    const double increment = traj.kind == TrajectoryKind::RadialGoldenAngle
                                 ? (traj.angle_increment > 0 ? traj.angle_increment : kGoldenAngle)
                                 : traj.angle_increment;
    const double t_den = static_cast<double>(std::max(n_frames - 1, 1));
    std::vector<Coord> out;
    out.reserve(static_cast<std::size_t>(traj.n_spokes) * traj.n_fe);
    for (int j = 0; j < traj.n_spokes; ++j) {
        const double angle = j * increment;
        const double c = std::cos(angle), s = std::sin(angle);
        const double t = (j % n_frames) / t_den;
        for (int i = 0; i < traj.n_fe; ++i) {
            const double r = -0.5 + static_cast<double>(i) / traj.n_fe;
            out.push_back({r * c, r * s, t});
        }
    }
    return out;
}

/// Grid node index of a coordinate if it lies on the n_x x n_y grid.
inline std::optional<Eigen::Index> grid_index(const Coord& c, int n_x, int n_y, double tol = 1e-9) {
    const double fx = (c.kx + 0.5) * n_x, fy = (c.ky + 0.5) * n_y;
    const double ix = std::round(fx), iy = std::round(fy);
    if (std::abs(fx - ix) > tol * n_x || std::abs(fy - iy) > tol * n_y) return std::nullopt;
    if (ix < 0 || iy < 0 || ix >= n_x || iy >= n_y) return std::nullopt;
    return static_cast<Eigen::Index>(iy) * n_x + static_cast<Eigen::Index>(ix);
}

/// True when coords are exactly the make_cartesian_grid(n_x, n_y) node sequence.
inline bool is_cartesian_grid(std::span<const Coord> coords, int n_x, int n_y) {
    if (static_cast<long>(coords.size()) != static_cast<long>(n_x) * n_y) return false;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        auto idx = grid_index(coords[i], n_x, n_y);
        if (!idx || *idx != static_cast<Eigen::Index>(i)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Coil sensitivities

struct CoilSensitivities {
    std::vector<ComplexImage> maps;

    int n_coils() const { return static_cast<int>(maps.size()); }
    int n_x() const { return maps.empty() ? 0 : static_cast<int>(maps.front().rows()); }
    int n_y() const { return maps.empty() ? 0 : static_cast<int>(maps.front().cols()); }
};

/// Pixel position in FOV units: (index - n/2) / n.
inline double pixel_position(int index, int n) { return static_cast<double>(index - n / 2) / n; }

/// Gaussian magnitude lobes centred on n_c points of the FOV perimeter with a
/// per-coil linear phase, normalized to unit root-sum-of-squares per pixel.
inline CoilSensitivities simulate_sensitivities(int n_x, int n_y, int n_c) {
    if (n_c < 1) throw InvalidArgument("simulate_sensitivities: n_c must be >= 1");
    if (n_x < 1 || n_y < 1) throw InvalidArgument("simulate_sensitivities: empty grid");
    constexpr double kLobeWidth = 0.3;
    constexpr double kPerimeter = 0.5;
    CoilSensitivities sens;
    sens.maps.assign(n_c, ComplexImage::Zero(n_x, n_y));
    for (int c = 0; c < n_c; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / n_c;
        const double dx = std::cos(angle), dy = std::sin(angle);
        for (int iy = 0; iy < n_y; ++iy) {
            const double py = pixel_position(iy, n_y);
            for (int ix = 0; ix < n_x; ++ix) {
                const double px = pixel_position(ix, n_x);
                double mag = 1.0, phase = 0.0;
                if (n_c > 1) {
                    const double ex = px - kPerimeter * dx, ey = py - kPerimeter * dy;
                    mag = std::exp(-(ex * ex + ey * ey) / (2.0 * kLobeWidth * kLobeWidth));
                    phase = std::numbers::pi * (px * dx + py * dy) + 0.5 * c;
                }
                sens.maps[c](ix, iy) = std::polar(mag, phase);
            }
        }
    }
    for (int iy = 0; iy < n_y; ++iy)
        for (int ix = 0; ix < n_x; ++ix) {
            double ss = 0.0;
            for (const auto& m : sens.maps) ss += std::norm(m(ix, iy));
            const double scale = 1.0 / std::sqrt(ss);
            for (auto& m : sens.maps) m(ix, iy) *= scale;
        }
    return sens;
}

// ---------------------------------------------------------------------------
// Phantom

/// Ellipse whose centre and semi-axes move affinely with t (units: FOV).
struct Ellipse {
    cdouble intensity{1.0, 0.0};
    double cx = 0.0, cy = 0.0;
    double ax = 0.1, ay = 0.1;
    double rotation = 0.0;
    double dcx = 0.0, dcy = 0.0;
    double dax = 0.0, day = 0.0;

    Ellipse at(double t) const {
        Ellipse e = *this;
        e.cx += dcx * t;
        e.cy += dcy * t;
        e.ax += dax * t;
        e.ay += day * t;
        return e;
    }
};

struct PhantomSpec {
    int n_x = 64;
    int n_y = 64;
    int n_coils = 4;
    std::vector<Ellipse> components;
};

/// Rejects components that leave the FOV or collapse for some t in [0, 1].
inline void validate_phantom(const PhantomSpec& spec) {
    if (spec.n_x < 2 || spec.n_y < 2) throw InvalidArgument("phantom grid must be at least 2x2");
    if (spec.n_coils < 1) throw InvalidArgument("phantom needs at least one coil");
    const double lo_x = pixel_position(0, spec.n_x), hi_x = pixel_position(spec.n_x - 1, spec.n_x);
    const double lo_y = pixel_position(0, spec.n_y), hi_y = pixel_position(spec.n_y - 1, spec.n_y);
    for (std::size_t k = 0; k < spec.components.size(); ++k) {
        // extents are convex in t, so checking the endpoints suffices
        for (double t : {0.0, 1.0}) {
            const Ellipse e = spec.components[k].at(t);
            if (!(e.ax > 0.0 && e.ay > 0.0))
                throw InvalidArgument("phantom component " + std::to_string(k) +
                                      " has non-positive axes within t in [0, 1]");
            const double c = std::cos(e.rotation), s = std::sin(e.rotation);
            const double hx = std::hypot(e.ax * c, e.ay * s);
            const double hy = std::hypot(e.ax * s, e.ay * c);
            if (e.cx - hx <= lo_x || e.cx + hx >= hi_x || e.cy - hy <= lo_y || e.cy + hy >= hi_y)
                throw InvalidArgument("phantom component " + std::to_string(k) +
                                      " leaves the field of view within t in [0, 1]");
        }
    }
}

/// Rasterizes the additive ellipse components at time t.
inline ComplexImage render_phantom(const PhantomSpec& spec, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("render_phantom: t must lie in [0, 1]");
    ComplexImage img = ComplexImage::Zero(spec.n_x, spec.n_y);
    for (const auto& comp : spec.components) {
        const Ellipse e = comp.at(t);
        const double c = std::cos(e.rotation), s = std::sin(e.rotation);
        for (int iy = 0; iy < spec.n_y; ++iy) {
            const double dy = pixel_position(iy, spec.n_y) - e.cy;
            for (int ix = 0; ix < spec.n_x; ++ix) {
                const double dx = pixel_position(ix, spec.n_x) - e.cx;
                const double u = (dx * c + dy * s) / e.ax;
                const double v = (-dx * s + dy * c) / e.ay;
                if (u * u + v * v <= 1.0) img(ix, iy) += e.intensity;
            }
        }
    }
    return img;
}

/// Torso-like phantom with a contracting cardiac-like structure.
inline PhantomSpec cardiac_phantom(int n, int n_coils) {
    PhantomSpec spec;
    spec.n_x = spec.n_y = n;
    spec.n_coils = n_coils;
    auto add = [&](double mag, double phase, double cx, double cy, double ax, double ay, double rot) {
        Ellipse e;
        e.intensity = std::polar(mag, phase);
        e.cx = cx;
        e.cy = cy;
        e.ax = ax;
        e.ay = ay;
        e.rotation = rot;
        spec.components.push_back(e);
        return spec.components.size() - 1;
    };
    add(0.5, 0.3, 0.0, 0.0, 0.40, 0.32, 0.0);          // torso
    add(0.3, -0.4, -0.18, 0.12, 0.12, 0.08, 0.4);      // liver-like
    add(0.6, 0.0, 0.0, -0.24, 0.05, 0.04, 0.0);        // spine-like
    const auto myo = add(0.4, 0.6, 0.06, 0.0, 0.16, 0.14, 0.3);
    spec.components[myo].dax = -0.04;
    spec.components[myo].day = -0.035;
    const auto pool = add(0.5, 0.2, 0.07, 0.0, 0.10, 0.09, 0.3);
    spec.components[pool].dax = -0.05;
    spec.components[pool].day = -0.045;
    spec.components[pool].dcx = -0.01;
    add(0.25, 1.0, 0.22, 0.14, 0.04, 0.06, 0.0);       // small lateral feature
    return spec;
}

// ---------------------------------------------------------------------------
// Fourier transforms

/// Exact nonuniform DFT of per-coil images:
/// y_c(k) = sum_r coil_c(r) exp(-2 pi i k . r), r = pixel index - n/2.
/// Samples are processed in fixed-size blocks in input order.
inline MultiCoilKSpace nudft_coil_images(const std::vector<ComplexImage>& coil_images,
                                         std::span<const Coord> coords) {
    if (coil_images.empty()) throw InvalidArgument("nudft: no coil images");
    const Eigen::Index n_x = coil_images.front().rows(), n_y = coil_images.front().cols();
    const Eigen::Index n_s = static_cast<Eigen::Index>(coords.size());
    const int n_c = static_cast<int>(coil_images.size());
    MultiCoilKSpace out;
    out.coords.assign(coords.begin(), coords.end());
    out.values.resize(n_s, n_c);
    out.n_fe = static_cast<int>(n_x);

    constexpr Eigen::Index kBlock = 512;
    const double two_pi = 2.0 * std::numbers::pi;
    Eigen::MatrixXcd ex, ey, tmp;
    for (Eigen::Index start = 0; start < n_s; start += kBlock) {
        const Eigen::Index b = std::min(kBlock, n_s - start);
        ex.resize(b, n_x);
        ey.resize(b, n_y);
        for (Eigen::Index i = 0; i < b; ++i) {
            const Coord& k = coords[start + i];
            for (Eigen::Index ix = 0; ix < n_x; ++ix)
                ex(i, ix) = std::polar(1.0, -two_pi * k.kx * static_cast<double>(ix - n_x / 2));
            for (Eigen::Index iy = 0; iy < n_y; ++iy)
                ey(i, iy) = std::polar(1.0, -two_pi * k.ky * static_cast<double>(iy - n_y / 2));
        }
        for (int c = 0; c < n_c; ++c) {
            tmp.noalias() = ex * coil_images[c];
            out.values.block(start, c, b, 1) = tmp.cwiseProduct(ey).rowwise().sum();
        }
    }
    return out;
}

inline std::vector<ComplexImage> coil_images(const ComplexImage& image, const CoilSensitivities& sens) {
    if (sens.n_x() != image.rows() || sens.n_y() != image.cols())
        throw InvalidArgument("image and sensitivity shapes differ");
    std::vector<ComplexImage> out;
    out.reserve(sens.maps.size());
    for (const auto& m : sens.maps) out.push_back(m.cwiseProduct(image));
    return out;
}

inline MultiCoilKSpace nudft_forward(const ComplexImage& image, const CoilSensitivities& sens,
                                     std::span<const Coord> coords) {
    return nudft_coil_images(coil_images(image, sens), coords);
}

/// Centred inverse DFT of each coil of a full Cartesian grid (n_x x n_y).
inline std::vector<ComplexImage> inverse_dft_coils(const MultiCoilKSpace& grid, int n_x, int n_y) {
    if (!is_cartesian_grid(grid.coords, n_x, n_y))
        throw InvalidArgument("inverse DFT requires a complete Cartesian grid");
    const double two_pi = 2.0 * std::numbers::pi;
    Eigen::MatrixXcd ax(n_x, n_x), ay(n_y, n_y);
    for (int r = 0; r < n_x; ++r)
        for (int m = 0; m < n_x; ++m)
            ax(r, m) = std::polar(1.0, two_pi * (static_cast<double>(m) / n_x - 0.5) * (r - n_x / 2));
    for (int n = 0; n < n_y; ++n)
        for (int r = 0; r < n_y; ++r)
            ay(n, r) = std::polar(1.0, two_pi * (static_cast<double>(n) / n_y - 0.5) * (r - n_y / 2));
    const double scale = 1.0 / (static_cast<double>(n_x) * n_y);
    std::vector<ComplexImage> out;
    for (Eigen::Index c = 0; c < grid.n_coils(); ++c) {
        Eigen::Map<const Eigen::MatrixXcd> y(grid.values.col(c).data(), n_x, n_y);
        out.push_back(scale * (ax * y * ay));
    }
    return out;
}

/// Inverse DFT followed by coil combination x = sum_c conj(S_c) x_c.
inline ComplexImage ifft_recon(const MultiCoilKSpace& grid, const CoilSensitivities& sens) {
    if (grid.n_coils() != sens.n_coils())
        throw InvalidArgument("ifft_recon: coil count differs from sensitivities");
    auto coils = inverse_dft_coils(grid, sens.n_x(), sens.n_y());
    ComplexImage img = ComplexImage::Zero(sens.n_x(), sens.n_y());
    for (int c = 0; c < sens.n_coils(); ++c) img += sens.maps[c].conjugate().cwiseProduct(coils[c]);
    return img;
}

/// Dynamic radial acquisition: the phantom is rendered at each frame time and
/// sampled along that frame's spokes (see make_radial_trajectory).
inline MultiCoilKSpace simulate_acquisition(const PhantomSpec& spec, const CoilSensitivities& sens,
                                            const Trajectory& traj, int n_frames) {
    if (sens.n_coils() != spec.n_coils) throw InvalidArgument("acquisition: coil count differs from phantom");
    const auto coords = make_radial_trajectory(traj, n_frames);
    MultiCoilKSpace out;
    out.coords = coords;
    out.values.resize(static_cast<Eigen::Index>(coords.size()), spec.n_coils);
    out.n_fe = traj.n_fe;
    for (int f = 0; f < n_frames; ++f) {
        std::vector<Coord> frame;
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < coords.size(); ++i)
            if (static_cast<int>((static_cast<std::size_t>(i) / traj.n_fe) % n_frames) == f) {
                frame.push_back(coords[i]);
                rows.push_back(static_cast<Eigen::Index>(i));
            }
        if (frame.empty()) continue;
        const auto k = nudft_forward(render_phantom(spec, frame.front().t), sens, frame);
        for (std::size_t i = 0; i < rows.size(); ++i) out.values.row(rows[i]) = k.values.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

/// Zero-filled non-Cartesian baseline: ramp-weighted adjoint DFT of the samples
/// at time t, coil-combined. Overall scale is arbitrary (metrics normalize).
inline ComplexImage adjoint_recon(const MultiCoilKSpace& samples, double t, const CoilSensitivities& sens,
                                  double t_tol = 1e-9) {
    if (samples.n_coils() != sens.n_coils()) throw InvalidArgument("adjoint_recon: coil count mismatch");
    const int n_x = sens.n_x(), n_y = sens.n_y();
    const double two_pi = 2.0 * std::numbers::pi;
    const double floor = 0.5 / std::max(n_x, n_y);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < samples.n_samples(); ++i)
        if (std::abs(samples.coords[i].t - t) <= t_tol) rows.push_back(i);
    if (rows.empty()) throw InvalidArgument("adjoint_recon: no samples at the requested time");
    const Eigen::Index b = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXcd ex(n_x, b), ey(b, n_y);
    for (Eigen::Index i = 0; i < b; ++i) {
        const Coord& k = samples.coords[rows[i]];
        for (int ix = 0; ix < n_x; ++ix) ex(ix, i) = std::polar(1.0, two_pi * k.kx * (ix - n_x / 2));
        for (int iy = 0; iy < n_y; ++iy) ey(i, iy) = std::polar(1.0, two_pi * k.ky * (iy - n_y / 2));
    }
    ComplexImage img = ComplexImage::Zero(n_x, n_y);
    Eigen::MatrixXcd weighted(b, n_y);
    for (int c = 0; c < sens.n_coils(); ++c) {
        for (Eigen::Index i = 0; i < b; ++i)
            weighted.row(i) = (std::max(radius(samples.coords[rows[i]]), floor) * samples.values(rows[i], c)) * ey.row(i);
        img += sens.maps[c].conjugate().cwiseProduct(ex * weighted);
    }
    return img;
}

// ---------------------------------------------------------------------------
// Noise

namespace detail {
template <typename Derived>
void add_complex_gaussian(Eigen::MatrixBase<Derived>& values, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw InvalidArgument("noise sigma must be non-negative");
    if (sigma == 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sigma);
    // storage order, real part before imaginary part
    for (Eigen::Index j = 0; j < values.cols(); ++j)
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
            const double re = nd(rng);
            const double im = nd(rng);
            values(i, j) += cdouble(re, im);
        }
}
}  // namespace detail

/// Adds complex Gaussian noise (real and imaginary parts each N(0, sigma^2)) in k-space.
inline MultiCoilKSpace add_noise(MultiCoilKSpace y, double sigma, std::uint64_t seed) {
    detail::add_complex_gaussian(y.values, sigma, seed);
    return y;
}

/// Image-domain variant; apply before the forward DFT.
inline ComplexImage add_noise(ComplexImage x, double sigma, std::uint64_t seed) {
    detail::add_complex_gaussian(x, sigma, seed);
    return x;
}

// ---------------------------------------------------------------------------
// Sampling masks

/// Line mask over the y (phase-encode) direction; kept(x, y) is constant along x.
struct SamplingMask {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> kept;
    double acceleration = 1.0;
    double center_fraction = 0.0;

    int n_x() const { return static_cast<int>(kept.rows()); }
    int n_y() const { return static_cast<int>(kept.cols()); }
    Eigen::Index kept_count() const { return kept.count(); }
    bool at(Eigen::Index grid_idx) const { return kept(grid_idx % kept.rows(), grid_idx / kept.rows()); }
};

inline SamplingMask make_mask(int n_x, int n_y, double acceleration, double center_fraction,
                              std::uint64_t seed) {
    if (n_x < 1 || n_y < 1) throw InvalidArgument("make_mask: empty grid");
    if (!(acceleration >= 1.0)) throw InvalidArgument("make_mask: acceleration must be >= 1");
    if (!(center_fraction >= 0.0 && center_fraction <= 1.0))
        throw InvalidArgument("make_mask: center_fraction must lie in [0, 1]");
    const int total = static_cast<int>(std::llround(n_y / acceleration));
    const int center = static_cast<int>(std::ceil(center_fraction * n_y - 1e-9));
    if (center > total)
        throw InvalidArgument("make_mask: central band exceeds the line budget n_y / R");

    std::vector<char> line(n_y, 0);
    const int first = n_y / 2 - center / 2;
    for (int i = 0; i < center; ++i) line[first + i] = 1;
    std::vector<int> rest;
    for (int i = 0; i < n_y; ++i)
        if (!line[i]) rest.push_back(i);
    std::mt19937_64 rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (int i = 0; i < total - center; ++i) line[rest[i]] = 1;

    SamplingMask mask;
    mask.acceleration = acceleration;
    mask.center_fraction = center_fraction;
    mask.kept.resize(n_x, n_y);
    for (int iy = 0; iy < n_y; ++iy) mask.kept.col(iy).setConstant(line[iy] != 0);
    return mask;
}

/// Keeps only the grid samples selected by the mask (grid order preserved).
inline MultiCoilKSpace apply_mask(const MultiCoilKSpace& grid, const SamplingMask& mask) {
    if (!is_cartesian_grid(grid.coords, mask.n_x(), mask.n_y()))
        throw InvalidArgument("apply_mask: k-space is not a full grid matching the mask");
    MultiCoilKSpace out;
    out.n_fe = grid.n_fe;
    out.values.resize(mask.kept_count(), grid.n_coils());
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < grid.n_samples(); ++i)
        if (mask.at(i)) {
            out.coords.push_back(grid.coords[i]);
            out.values.row(row++) = grid.values.row(i);
        }
    return out;
}

/// Scatters grid-located samples onto a full grid, zeros elsewhere.
inline MultiCoilKSpace zero_filled(const MultiCoilKSpace& samples, int n_x, int n_y) {
    MultiCoilKSpace out;
    const double t = samples.coords.empty() ? 0.0 : samples.coords.front().t;
    out.coords = make_cartesian_grid(n_x, n_y, t);
    out.values = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n_x) * n_y, samples.n_coils());
    out.n_fe = samples.n_fe > 0 ? samples.n_fe : n_x;
    for (Eigen::Index i = 0; i < samples.n_samples(); ++i) {
        auto idx = grid_index(samples.coords[i], n_x, n_y);
        if (!idx) throw InvalidArgument("zero_filled: sample off the Cartesian grid");
        out.values.row(*idx) = samples.values.row(i);
    }
    return out;
}

/// Median magnitude over all entries.
inline double median_magnitude(const Eigen::MatrixXcd& values) {
    std::vector<double> mags(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) mags[i] = std::abs(values.data()[i]);
    if (mags.empty()) return 0.0;
    auto mid = mags.begin() + mags.size() / 2;
    std::nth_element(mags.begin(), mid, mags.end());
    return *mid;
}

}  // namespace pisco
