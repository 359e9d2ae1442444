#pragma once

#include <random>
#include <vector>

#include "pisco/loss.hpp"

namespace pisco {

/// Exact k-space of a fixed image and coil set at arbitrary coordinates.
class ExactKSpace {
public:
    ExactKSpace(const ComplexImage& image, const CoilSensitivities& sens, double scale = 1.0)
        : coils_(coil_images(image, sens)) {
        for (auto& c : coils_) c *= scale;
    }

    Eigen::MatrixXcd operator()(std::span<const Coord> coords) const {
        return nudft_coil_images(coils_, coords).values;
    }

    int n_coils() const { return static_cast<int>(coils_.size()); }

private:
    std::vector<ComplexImage> coils_;
};

/// Spread of the weight entries across subsets. Per entry e:
/// mean_abs = |mean_s W_s,e|, std = sqrt(mean_s |W_s,e - mean_s W_s,e|^2),
/// cov = std / mean_s |W_s,e|.
struct WeightDispersion {
    Eigen::MatrixXd mean_abs;
    Eigen::MatrixXd variance;
    Eigen::MatrixXd cov;
    double mean_cov = 0.0;
    double mean_variance = 0.0;
};

inline WeightDispersion weight_dispersion(std::span<const WeightSet> sets) {
    if (sets.size() < 2) throw InvalidArgument("weight dispersion needs at least 2 weight sets");
    const auto rows = sets.front().weights.rows(), cols = sets.front().weights.cols();
    Eigen::MatrixXcd mean = Eigen::MatrixXcd::Zero(rows, cols);
    Eigen::MatrixXd mean_mag = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& s : sets) {
        if (s.weights.rows() != rows || s.weights.cols() != cols)
            throw InvalidArgument("weight dispersion: shape mismatch");
        mean += s.weights;
        mean_mag += s.weights.cwiseAbs();
    }
    const double n = static_cast<double>(sets.size());
    mean /= n;
    mean_mag /= n;
    WeightDispersion d;
    d.variance = Eigen::MatrixXd::Zero(rows, cols);
    for (const auto& s : sets) d.variance += (s.weights - mean).cwiseAbs2();
    d.variance /= n;
    d.mean_abs = mean.cwiseAbs();
    d.cov = d.variance.cwiseSqrt().cwiseQuotient(mean_mag.cwiseMax(1e-300));
    d.mean_cov = d.cov.mean();
    d.mean_variance = d.variance.mean();
    return d;
}

/// Weight sets solved on `n_subsets` subsets of exact k-space around grid
/// targets (t = 0) drawn with `rng`. The pair pool is split either by target
/// radius or in random order.
inline std::vector<WeightSet> kernel_weight_sets(const ExactKSpace& kspace, int n, const KernelGeometry& geometry,
                                                 const PiscoConfig& cfg, std::size_t n_subsets,
                                                 PartitionOrder order, std::mt19937_64& rng) {
    PiscoConfig c = cfg;
    c.geometry = geometry;
    c.n_s_min = n_subsets;
    c.validate();
    const std::size_t n_m = subset_size(geometry.neighbor_count(), kspace.n_coils(), c.f_od);
    const double t0[] = {0.0};
    const auto targets = sample_targets({n, n, geometry.extent()}, n_subsets * n_m, t0, rng, c.exclusion_radius);
    auto pairs = make_patch_pairs(geometry, targets);
    const auto part = order == PartitionOrder::ByRadius
                          ? sort_and_partition(std::move(pairs), kspace.n_coils(), c.f_od, n_subsets)
                          : random_partition(std::move(pairs), kspace.n_coils(), c.f_od, n_subsets, rng);
    return solve_partition(part, std::cref(kspace), c.alpha);
}

/// Stacked |W_s| (or arg W_s) image: one column per subset, rows are the
/// flattened (neighbor*coil, coil) entries.
inline RealImage stacked_weights(std::span<const WeightSet> sets, bool phase) {
    if (sets.empty()) throw InvalidArgument("stacked weights: no weight sets");
    const auto entries = sets.front().weights.size();
    RealImage img(entries, static_cast<Eigen::Index>(sets.size()));
    for (std::size_t s = 0; s < sets.size(); ++s) {
        const auto& w = sets[s].weights;
        for (Eigen::Index e = 0; e < entries; ++e)
            img(e, static_cast<Eigen::Index>(s)) = phase ? std::arg(w.data()[e]) : std::abs(w.data()[e]);
    }
    return img;
}

}  // namespace pisco
