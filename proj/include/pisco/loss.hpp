#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pisco/kspace.hpp"
#include "pisco/sampling.hpp"
#include "pisco/solver.hpp"
#include "pisco/types.hpp"

namespace pisco {

enum class ConsistencyMeasure { Residual, Distance };
enum class GradientMode { FixedWeights, ThroughSolve };

struct PiscoConfig {
    KernelGeometry geometry;
    double alpha = 1e-4;
    double f_od = 1.1;
    std::size_t n_s_min = 20;
    double exclusion_radius = 10.0 / 64.0;
    double lambda = 0.0;
    ConsistencyMeasure measure = ConsistencyMeasure::Residual;
    GradientMode gradient_mode = GradientMode::FixedWeights;
    /// Divide each subset residual by sqrt(N_m * N_c).
    bool normalize_entries = false;

    /// Kernel spacing 2/N_FE and exclusion radius 10/N_FE for a grid of n_fe.
    static PiscoConfig for_grid(int n_fe) {
        PiscoConfig cfg;
        cfg.geometry.delta = 2.0 / n_fe;
        cfg.exclusion_radius = 10.0 / n_fe;
        return cfg;
    }

    void validate() const {
        geometry.validate();
        if (lambda < 0.0) throw InvalidArgument("pisco: lambda must be non-negative");
        if (alpha < 0.0) throw InvalidArgument("pisco: alpha must be non-negative");
        if (!(f_od > 1.0)) throw InvalidArgument("pisco: f_od must exceed 1");
        if (exclusion_radius < 0.0) throw InvalidArgument("pisco: exclusion radius must be non-negative");
        if (n_s_min < 1) throw InvalidArgument("pisco: n_s_min must be at least 1");
    }
};

/// Flattened coordinates of all subsets in subset order (see flatten_coords).
inline std::vector<Coord> flatten_partition(const SubsetPartition& part) {
    std::vector<Coord> out;
    for (const auto& s : part.subsets) {
        auto c = flatten_coords(s);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

struct PiscoEvaluation {
    double loss = 0.0;
    std::vector<double> subset_residuals;
    std::vector<WeightSet> weights;
    /// d loss / d values, same layout as the values passed in. Empty unless requested.
    Eigen::MatrixXcd cotangents;
};

/// Residual consistency (1/N_s) sum_s ||P_s W_s - T_s||_F from values laid out
/// as flatten_partition(part). Complex cotangents use the convention
/// dL/dRe + i dL/dIm, so a descent step is values -= lr * cotangents.
inline PiscoEvaluation evaluate_residual(const SubsetPartition& part, const Eigen::MatrixXcd& values,
                                         double alpha, std::optional<GradientMode> gradient = std::nullopt,
                                         bool normalize_entries = false) {
    if (part.subsets.empty()) throw InvalidArgument("residual loss: empty partition");
    PiscoEvaluation ev;
    if (gradient) {
        if (*gradient != GradientMode::FixedWeights && *gradient != GradientMode::ThroughSolve)
            throw InvalidArgument("unsupported gradient mode");
        ev.cotangents = Eigen::MatrixXcd::Zero(values.rows(), values.cols());
    }
    const double inv_ns = 1.0 / static_cast<double>(part.subsets.size());
    const Eigen::Index n_c = values.cols();
    Eigen::Index row0 = 0;
    for (std::size_t s = 0; s < part.subsets.size(); ++s) {
        const auto& subset = part.subsets[s];
        const Eigen::Index n_pairs = static_cast<Eigen::Index>(subset.size());
        const Eigen::Index n_n = static_cast<Eigen::Index>(subset.front().neighbors.size());
        if (row0 + n_pairs * (1 + n_n) > values.rows())
            throw InvalidArgument("residual loss: values do not cover the partition");
        const SubsetSystem sys = system_from_values(values, row0, n_pairs, n_n, subset.front().target.t);

        std::optional<NormalSolver> solver;
        try {
            solver.emplace(sys.patches, alpha);
        } catch (const IllConditioned& e) {
            throw IllConditioned("subset " + std::to_string(s) + ": " + e.what());
        }
        WeightSet ws;
        ws.alpha = alpha;
        ws.weights = solver->solve(sys.patches.adjoint() * sys.targets);
        if (!ws.weights.allFinite())
            throw IllConditioned("subset " + std::to_string(s) + ": non-finite weights");
        const Eigen::MatrixXcd resid = sys.patches * ws.weights - sys.targets;
        ws.residual_fro = resid.norm();
        const double scale = normalize_entries ? 1.0 / std::sqrt(static_cast<double>(resid.size())) : 1.0;
        ev.subset_residuals.push_back(scale * ws.residual_fro);
        ev.loss += inv_ns * scale * ws.residual_fro;

        // zero subgradient once the residual is at round-off level
        if (gradient && ws.residual_fro > 1e-12 * sys.targets.norm()) {
            const Eigen::MatrixXcd g_r = (inv_ns * scale / ws.residual_fro) * resid;
            Eigen::MatrixXcd g_t = -g_r;
            Eigen::MatrixXcd g_p = g_r * ws.weights.adjoint();
            if (*gradient == GradientMode::ThroughSolve) {
                // adjoint of W = A^-1 P^H T with A = P^H P + alpha I
                const Eigen::MatrixXcd lambda = solver->solve(sys.patches.adjoint() * g_r);
                g_t += sys.patches * lambda;
                g_p -= resid * lambda.adjoint() + sys.patches * (lambda * ws.weights.adjoint());
            }
            for (Eigen::Index i = 0; i < n_pairs; ++i) {
                const Eigen::Index base = row0 + i * (1 + n_n);
                ev.cotangents.row(base) += g_t.row(i);
                for (Eigen::Index n = 0; n < n_n; ++n)
                    ev.cotangents.row(base + 1 + n) += g_p.block(i, n * n_c, 1, n_c);
            }
        }
        ev.weights.push_back(std::move(ws));
        row0 += n_pairs * (1 + n_n);
    }
    return ev;
}

inline double residual_loss(const SubsetPartition& part, const ValueEvaluator& values_at, double alpha,
                            bool normalize_entries = false) {
    const auto coords = flatten_partition(part);
    return evaluate_residual(part, values_at(coords), alpha, std::nullopt, normalize_entries).loss;
}

/// Per-coordinate cotangents of the residual loss, rows aligned with `coords`.
struct PiscoGradient {
    double loss = 0.0;
    std::vector<Coord> coords;
    Eigen::MatrixXcd cotangents;
};

inline PiscoGradient pisco_gradient(const SubsetPartition& part, const ValueEvaluator& values_at,
                                    double alpha, GradientMode mode, bool normalize_entries = false) {
    PiscoGradient g;
    g.coords = flatten_partition(part);
    auto ev = evaluate_residual(part, values_at(g.coords), alpha, mode, normalize_entries);
    g.loss = ev.loss;
    g.cotangents = std::move(ev.cotangents);
    return g;
}

/// (1/N_s^2) sum_i sum_{j != i} (||Re(W_i - W_j)||_1 + ||Im(W_i - W_j)||_1).
inline double distance_loss(std::span<const WeightSet> sets) {
    if (sets.size() < 2) throw InvalidArgument("distance loss needs at least two weight sets");
    const auto rows = sets.front().weights.rows(), cols = sets.front().weights.cols();
    for (const auto& s : sets)
        if (s.weights.rows() != rows || s.weights.cols() != cols)
            throw InvalidArgument("distance loss: weight set shapes differ");
    const double n_s = static_cast<double>(sets.size());
    double total = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = 0; j < sets.size(); ++j) {
            if (i == j) continue;
            const Eigen::MatrixXcd d = sets[i].weights - sets[j].weights;
            total += d.real().cwiseAbs().sum() + d.imag().cwiseAbs().sum();
        }
    return total / (n_s * n_s);
}

inline std::vector<WeightSet> solve_partition(const SubsetPartition& part, const ValueEvaluator& values_at,
                                              double alpha) {
    return evaluate_residual(part, values_at(flatten_partition(part)), alpha).weights;
}

/// One optimization epoch; pisco is 0 while the term is inactive.
struct HistoryRow {
    int epoch = 0;
    double dc = 0.0;
    double pisco = 0.0;
    double total = 0.0;
};

/// L_RECON = L_DC + lambda * L_PISCO.
inline double combined_objective(double dc_loss, double pisco_loss, double lambda) {
    if (lambda < 0.0) throw InvalidArgument("combined objective: lambda must be non-negative");
    if (lambda == 0.0) return dc_loss;
    return dc_loss + lambda * pisco_loss;
}

// ---------------------------------------------------------------------------
// Noise sweeps

enum class NoiseDomain { KSpace, Image };

inline std::string to_string(NoiseDomain d) { return d == NoiseDomain::KSpace ? "kspace" : "image"; }
inline std::string to_string(ConsistencyMeasure m) {
    return m == ConsistencyMeasure::Residual ? "residual" : "distance";
}

/// Ideal image and coil maps; k-space is nudft(image) on the full grid,
/// multiplied by `kspace_scale`.
struct SweepBase {
    ComplexImage image;
    CoilSensitivities sens;
    double kspace_scale = 1.0;
};

struct SweepSample {
    double sigma = 0.0;
    std::uint64_t seed = 0;
    double raw_loss = 0.0;
    double normalized_loss = 0.0;
};

struct SweepCurve {
    std::vector<SweepSample> samples;  // sigma-major, then seed
    std::vector<double> sigmas;
    std::vector<double> mean_loss;
    std::vector<double> normalized;  // mean_loss / max(mean_loss)
};

/// Draws a sorted Cartesian partition on an n x n grid at t = 0.
inline SubsetPartition draw_grid_partition(const PiscoConfig& cfg, int n, int n_coils, std::mt19937_64& rng) {
    const std::size_t n_m = subset_size(cfg.geometry.neighbor_count(), n_coils, cfg.f_od);
    const double t0[] = {0.0};
    const auto targets = sample_targets({n, n, cfg.geometry.extent()}, cfg.n_s_min * n_m, t0, rng,
                                        cfg.exclusion_radius);
    return sort_and_partition(make_patch_pairs(cfg.geometry, targets), n_coils, cfg.f_od, cfg.n_s_min);
}

inline double evaluate_measure(ConsistencyMeasure measure, const SubsetPartition& part,
                               const ValueEvaluator& values_at, const PiscoConfig& cfg) {
    if (measure == ConsistencyMeasure::Residual)
        return residual_loss(part, values_at, cfg.alpha, cfg.normalize_entries);
    const auto sets = solve_partition(part, values_at, cfg.alpha);
    return distance_loss(sets);
}

/// For every sigma and seed: corrupt the base (noise seeded by `seed`), draw
/// fresh subsets (seeded by seed and sigma index) and evaluate the measure.
/// Sigmas are absolute standard deviations in the chosen domain (image noise
/// in image units, k-space noise in scaled k-space units).
inline SweepCurve consistency_sweep(const SweepBase& base, std::span<const double> sigmas, NoiseDomain domain,
                                    ConsistencyMeasure measure, std::span<const std::uint64_t> seeds,
                                    const PiscoConfig& cfg) {
    if (sigmas.empty()) throw InvalidArgument("consistency sweep: empty sigma list");
    if (seeds.empty()) throw InvalidArgument("consistency sweep: empty seed list");
    if (!std::is_sorted(sigmas.begin(), sigmas.end()))
        throw InvalidArgument("consistency sweep: sigmas must be sorted ascending");
    cfg.validate();
    const int n = static_cast<int>(base.image.rows());
    const int n_c = base.sens.n_coils();
    const auto grid = make_cartesian_grid(n, static_cast<int>(base.image.cols()));
    MultiCoilKSpace ideal = nudft_forward(base.image, base.sens, grid);
    ideal.values *= base.kspace_scale;

    SweepCurve curve;
    curve.sigmas.assign(sigmas.begin(), sigmas.end());
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        double sum = 0.0;
        for (std::uint64_t seed : seeds) {
            MultiCoilKSpace data;
            if (domain == NoiseDomain::KSpace) {
                data = add_noise(ideal, sigmas[i], seed);
            } else {
                data = nudft_forward(add_noise(base.image, sigmas[i], seed), base.sens, grid);
                data.values *= base.kspace_scale;
            }
            std::seed_seq seq{seed, static_cast<std::uint64_t>(i), std::uint64_t{0x5157}};
            std::mt19937_64 rng(seq);
            const auto part = draw_grid_partition(cfg, n, n_c, rng);
            GridLookup lookup(data, n, static_cast<int>(base.image.cols()));
            const double loss = evaluate_measure(measure, part, std::cref(lookup), cfg);
            curve.samples.push_back({sigmas[i], seed, loss, 0.0});
            sum += loss;
        }
        curve.mean_loss.push_back(sum / static_cast<double>(seeds.size()));
    }
    const double peak = *std::max_element(curve.mean_loss.begin(), curve.mean_loss.end());
    for (double m : curve.mean_loss) curve.normalized.push_back(peak > 0.0 ? m / peak : 0.0);
    for (auto& s : curve.samples) s.normalized_loss = peak > 0.0 ? s.raw_loss / peak : 0.0;
    return curve;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (i + j) / 2.0 + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace pisco
