#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pisco/pisco.hpp"

namespace pisco::cli {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Read-once view of a JSON object: every accessed key is recorded so that
/// finish() can reject the rest by name.
class Node {
public:
    Node(const json& j, std::string path) : path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(where() + " must be an object");
        j_ = &j;
    }

    bool has(const std::string& key) const { return j_->contains(key); }

    template <typename T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!j_->contains(key)) return fallback;
        return convert<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        used_.insert(key);
        if (!j_->contains(key)) throw ConfigError("missing key '" + name(key) + "'");
        return convert<T>(key);
    }

    Node child(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        if (!j_->contains(key)) return Node(empty, name(key));
        return Node(j_->at(key), name(key));
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_->items())
            if (!used_.count(k)) throw ConfigError("unknown key '" + name(k) + "'");
    }

private:
    std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

    template <typename T>
    T convert(const std::string& key) const {
        const json& v = j_->at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("key '" + name(key) + "' must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("key '" + name(key) + "' must be an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned())
                    throw ConfigError("key '" + name(key) + "' must be non-negative");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("key '" + name(key) + "' must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("key '" + name(key) + "' must be a string");
        }
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError("key '" + name(key) + "' has the wrong type");
        }
    }

    const json* j_ = nullptr;
    std::string path_;
    std::set<std::string> used_;
};

enum class Scale { Natural, UnitMax };

struct PhantomSection {
    int n = 64;
    int n_coils = 4;
    int frames = 25;
    bool static_motion = false;
};

struct TrajectorySection {
    TrajectoryKind kind = TrajectoryKind::RadialGoldenAngle;
    int spokes_per_frame = 4;
    int n_fe = 0;  // 0: phantom grid size
};

struct MaskSection {
    double acceleration = 2.0;
    double center_fraction = 0.04;
    std::optional<std::uint64_t> seed;
};

struct TrainSection {
    TrainConfig cfg;
    NikArchitecture arch;
    /// epsilon = factor * median |y_acq|; 0 keeps the library default.
    double dc_epsilon_over_median = 0.0;
};

struct ValidateSection {
    std::size_t n_subsets = 20;
    std::vector<KernelKind> kernels{KernelKind::Cartesian, KernelKind::Radial, KernelKind::RadialEquidistant};
};

struct SweepSection {
    std::vector<double> sigmas_over_median{0.0, 0.01, 0.02, 0.05, 0.1};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<NoiseDomain> domains{NoiseDomain::KSpace, NoiseDomain::Image};
    std::vector<ConsistencyMeasure> measures{ConsistencyMeasure::Residual, ConsistencyMeasure::Distance};
};

struct ReconSection {
    std::string checkpoint;
    std::vector<double> times;  // empty: the phantom's frame times
    int grid = 0;               // 0: phantom grid size
    int profile_index = -1;     // -1: centre
};

struct MetricsSection {
    std::string recon_dir;
    std::string reference_dir;
    std::string method = "recon";
    double acceleration = 0.0;
};

struct ExperimentConfig {
    json raw;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    std::string input;
    Scale scale = Scale::UnitMax;
    double noise_over_median = 0.0;
    PhantomSection phantom;
    TrajectorySection trajectory;
    MaskSection mask;
    PiscoConfig pisco;
    FitConfig fit;
    TrainSection train;
    ValidateSection validate;
    SweepSection sweep;
    ReconSection recon;
    MetricsSection metrics;

    int n_fe() const { return trajectory.n_fe > 0 ? trajectory.n_fe : phantom.n; }
    std::uint64_t mask_seed() const { return mask.seed.value_or(seed); }
};

namespace detail {

template <typename E>
E parse_enum(Node& node, const std::string& key, E fallback, const std::vector<std::pair<std::string, E>>& names) {
    if (!node.has(key)) {
        node.get<std::string>(key, "");
        return fallback;
    }
    const auto s = node.require<std::string>(key);
    for (const auto& [n, e] : names)
        if (n == s) return e;
    std::string allowed;
    for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("key '" + node.name(key) + "' must be one of: " + allowed);
}

inline const std::vector<std::pair<std::string, KernelKind>> kKernelNames{
    {"cartesian", KernelKind::Cartesian},
    {"radial", KernelKind::Radial},
    {"radial-equidistant", KernelKind::RadialEquidistant}};

inline const std::vector<std::pair<std::string, OptimizerKind>> kOptimizerNames{
    {"adam-amsgrad", OptimizerKind::AdamAmsgrad}, {"gradient-descent", OptimizerKind::GradientDescent}};

inline KernelKind kernel_from_string(const std::string& s, const std::string& key) {
    for (const auto& [n, k] : kKernelNames)
        if (n == s) return k;
    throw ConfigError("key '" + key + "' has unknown kernel '" + s + "'");
}

inline void require_positive(double v, const std::string& key) {
    if (!(v > 0.0)) throw ConfigError("key '" + key + "' must be positive");
}

inline PiscoConfig parse_pisco(Node node, int n_fe) {
    PiscoConfig p = PiscoConfig::for_grid(n_fe);
    Node kernel = node.child("kernel");
    p.geometry.kind = parse_enum(kernel, "kind", KernelKind::Cartesian, kKernelNames);
    const auto shape = kernel.get<std::vector<int>>("shape", {3, 2});
    if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1)
        throw ConfigError("key '" + kernel.name("shape") + "' must be two positive integers");
    p.geometry.a = shape[0];
    p.geometry.b = shape[1];
    const double delta_units = kernel.get("delta_in_fe_units", 2.0);
    require_positive(delta_units, kernel.name("delta_in_fe_units"));
    p.geometry.delta = delta_units / n_fe;
    p.geometry.orientation = parse_enum(kernel, "orientation", Orientation::YMajor,
                                        {{"y-major", Orientation::YMajor}, {"x-major", Orientation::XMajor}});
    kernel.finish();
    p.alpha = node.get("alpha", p.alpha);
    p.f_od = node.get("f_od", p.f_od);
    p.n_s_min = node.get("n_s_min", p.n_s_min);
    p.exclusion_radius = node.get("exclusion_radius_in_fe_units", 10.0) / n_fe;
    p.measure = parse_enum(node, "measure", ConsistencyMeasure::Residual,
                           {{"residual", ConsistencyMeasure::Residual}, {"distance", ConsistencyMeasure::Distance}});
    p.gradient_mode = parse_enum(node, "gradient_mode", GradientMode::FixedWeights,
                                 {{"fixed-weights", GradientMode::FixedWeights},
                                  {"through-solve", GradientMode::ThroughSolve}});
    p.normalize_entries = node.get("normalize_entries", false);
    node.finish();
    try {
        p.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("pisco: ") + e.what());
    }
    return p;
}

}  // namespace detail

/// Schema validation of one experiment document. Unknown keys anywhere are
/// rejected; command-specific requirements are checked by the commands.
inline ExperimentConfig parse_config(const json& doc) {
    using namespace detail;
    ExperimentConfig c;
    c.raw = doc;
    Node root(doc, "");
    c.output_dir = root.get<std::string>("output_dir", c.output_dir);
    c.seed = root.get<std::uint64_t>("seed", 0);
    c.input = root.get<std::string>("input", "");
    c.scale = parse_enum(root, "scale", Scale::UnitMax, {{"natural", Scale::Natural}, {"unit-max", Scale::UnitMax}});

    {
        Node n = root.child("phantom");
        c.phantom.n = n.get("n", c.phantom.n);
        c.phantom.n_coils = n.get("n_coils", c.phantom.n_coils);
        c.phantom.frames = n.get("frames", c.phantom.frames);
        c.phantom.static_motion = n.get("static", false);
        n.finish();
        if (c.phantom.n < 8) throw ConfigError("key 'phantom.n' must be at least 8");
        if (c.phantom.n_coils < 1) throw ConfigError("key 'phantom.n_coils' must be positive");
        if (c.phantom.frames < 1) throw ConfigError("key 'phantom.frames' must be positive");
    }
    {
        Node n = root.child("trajectory");
        c.trajectory.kind = parse_enum(n, "kind", TrajectoryKind::RadialGoldenAngle,
                                       {{"radial-golden-angle", TrajectoryKind::RadialGoldenAngle},
                                        {"radial-uniform", TrajectoryKind::RadialUniform},
                                        {"cartesian", TrajectoryKind::CartesianGrid}});
        c.trajectory.spokes_per_frame = n.get("spokes_per_frame", c.trajectory.spokes_per_frame);
        c.trajectory.n_fe = n.get("n_fe", 0);
        n.finish();
        if (c.trajectory.spokes_per_frame < 1) throw ConfigError("key 'trajectory.spokes_per_frame' must be positive");
        if (c.trajectory.n_fe < 0 || c.trajectory.n_fe == 1) throw ConfigError("key 'trajectory.n_fe' must be >= 2");
    }
    {
        Node n = root.child("noise");
        c.noise_over_median = n.get("sigma_over_median", 0.0);
        n.finish();
        if (c.noise_over_median < 0.0) throw ConfigError("key 'noise.sigma_over_median' must be non-negative");
    }
    {
        Node n = root.child("mask");
        c.mask.acceleration = n.get("acceleration", c.mask.acceleration);
        c.mask.center_fraction = n.get("center_fraction", c.mask.center_fraction);
        if (n.has("seed")) c.mask.seed = n.require<std::uint64_t>("seed");
        n.finish();
        if (c.mask.acceleration < 1.0) throw ConfigError("key 'mask.acceleration' must be >= 1");
        if (c.mask.center_fraction < 0.0 || c.mask.center_fraction > 1.0)
            throw ConfigError("key 'mask.center_fraction' must lie in [0, 1]");
    }
    c.pisco = parse_pisco(root.child("pisco"), c.n_fe());
    {
        Node n = root.child("fit");
        FitConfig& f = c.fit;
        f.lambda = n.get("lambda", f.lambda);
        f.epochs = n.get("epochs", f.epochs);
        f.precondition_epochs = n.get("precondition_epochs", f.precondition_epochs);
        f.learning_rate = n.get("learning_rate", 1e-4);
        f.optimizer = parse_enum(n, "optimizer", f.optimizer, kOptimizerNames);
        f.targets_per_epoch = n.get("targets_per_epoch", f.targets_per_epoch);
        n.finish();
        f.pisco = c.pisco;
        f.seed = c.seed;
        try {
            f.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
    {
        Node n = root.child("train");
        TrainConfig& t = c.train.cfg;
        t.epochs = n.get("epochs", 1000);
        t.e_pre = n.get("e_pre", 200);
        t.learning_rate = n.get("learning_rate", 1e-3);
        t.batch_size = n.get("batch_size", t.batch_size);
        t.lambda = n.get("lambda", 0.0);
        t.optimizer = parse_enum(n, "optimizer", t.optimizer, kOptimizerNames);
        c.train.dc_epsilon_over_median = n.get("dc_epsilon_over_median", 0.0);
        Node a = n.child("architecture");
        NikArchitecture& arch = c.train.arch;
        arch.n_features = a.get("n_features", 32);
        arch.sigma = a.get("sigma", 1.0);
        arch.hidden = a.get("hidden", 64);
        arch.layers = a.get("layers", 4);
        arch.omega = a.get("omega", 20.0);
        a.finish();
        n.finish();
        arch.n_coils = c.phantom.n_coils;
        t.pisco = c.pisco;
        t.seed = c.seed;
        if (c.train.dc_epsilon_over_median < 0.0)
            throw ConfigError("key 'train.dc_epsilon_over_median' must be non-negative");
        try {
            t.validate();
            arch.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
    {
        Node n = root.child("validate");
        c.validate.n_subsets = n.get("n_subsets", c.validate.n_subsets);
        if (n.has("kernels")) {
            c.validate.kernels.clear();
            for (const auto& s : n.require<std::vector<std::string>>("kernels"))
                c.validate.kernels.push_back(kernel_from_string(s, n.name("kernels")));
        }
        n.finish();
        if (c.validate.n_subsets < 2)
            throw ConfigError("key 'validate.n_subsets' must be at least 2 (dispersion is undefined for one subset)");
        if (c.validate.kernels.empty()) throw ConfigError("key 'validate.kernels' must not be empty");
    }
    {
        Node n = root.child("sweep");
        SweepSection& s = c.sweep;
        s.sigmas_over_median = n.get("sigmas_over_median", s.sigmas_over_median);
        s.seeds = n.get("seeds", s.seeds);
        if (n.has("domains")) {
            s.domains.clear();
            for (const auto& d : n.require<std::vector<std::string>>("domains")) {
                if (d == "kspace") s.domains.push_back(NoiseDomain::KSpace);
                else if (d == "image") s.domains.push_back(NoiseDomain::Image);
                else throw ConfigError("key 'sweep.domains' has unknown domain '" + d + "'");
            }
        }
        if (n.has("measures")) {
            s.measures.clear();
            for (const auto& m : n.require<std::vector<std::string>>("measures")) {
                if (m == "residual") s.measures.push_back(ConsistencyMeasure::Residual);
                else if (m == "distance") s.measures.push_back(ConsistencyMeasure::Distance);
                else throw ConfigError("key 'sweep.measures' has unknown measure '" + m + "'");
            }
        }
        n.finish();
        if (s.sigmas_over_median.empty() || !std::is_sorted(s.sigmas_over_median.begin(), s.sigmas_over_median.end()))
            throw ConfigError("key 'sweep.sigmas_over_median' must be a non-empty ascending list");
        if (s.seeds.empty()) throw ConfigError("key 'sweep.seeds' must not be empty");
    }
    {
        Node n = root.child("recon");
        c.recon.checkpoint = n.get<std::string>("checkpoint", "");
        c.recon.times = n.get("times", std::vector<double>{});
        c.recon.grid = n.get("grid", 0);
        c.recon.profile_index = n.get("profile_index", -1);
        n.finish();
        for (double t : c.recon.times)
            if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("key 'recon.times' entries must lie in [0, 1]");
    }
    {
        Node n = root.child("metrics");
        c.metrics.recon_dir = n.get<std::string>("recon_dir", "");
        c.metrics.reference_dir = n.get<std::string>("reference_dir", "");
        c.metrics.method = n.get<std::string>("method", c.metrics.method);
        c.metrics.acceleration = n.get("acceleration", 0.0);
        n.finish();
    }
    root.finish();
    return c;
}

/// 64-bit FNV-1a of the canonical (key-sorted, compact) JSON text.
inline std::uint64_t config_hash(const json& doc) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : doc.dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace pisco::cli
