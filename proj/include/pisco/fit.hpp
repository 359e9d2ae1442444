#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pisco/eval.hpp"
#include "pisco/kspace.hpp"
#include "pisco/loss.hpp"
#include "pisco/optim.hpp"
#include "pisco/sampling.hpp"

namespace pisco {

struct FitConfig {
    double lambda = 5e-4;
    int epochs = 500;
    int precondition_epochs = 100;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::AdamAmsgrad;
    PiscoConfig pisco;
    std::uint64_t seed = 0;
    /// 0 selects n_s_min * N_m targets per epoch.
    std::size_t targets_per_epoch = 0;

    void validate() const {
        if (lambda < 0.0) throw InvalidArgument("fit: lambda must be non-negative");
        if (epochs < 0) throw InvalidArgument("fit: epochs must be non-negative");
        if (precondition_epochs < 0 || precondition_epochs > epochs)
            throw InvalidArgument("fit: precondition_epochs must lie in [0, epochs]");
        if (!(learning_rate > 0.0)) throw InvalidArgument("fit: learning rate must be positive");
        pisco.validate();
    }
};

struct FitResult {
    MultiCoilKSpace fitted;  // full grid, make_cartesian_grid order
    std::vector<HistoryRow> history;
};

/// Mean of |Re d| + |Im d| over all entries, and its subgradient.
inline double complex_l1(const Eigen::MatrixXcd& diff, Eigen::MatrixXcd* grad = nullptr) {
    const double inv = 1.0 / static_cast<double>(diff.size());
    double sum = 0.0;
    if (grad) grad->resize(diff.rows(), diff.cols());
    for (Eigen::Index i = 0; i < diff.size(); ++i) {
        const cdouble d = diff.data()[i];
        sum += std::abs(d.real()) + std::abs(d.imag());
        if (grad) {
            auto sgn = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
            grad->data()[i] = inv * cdouble(sgn(d.real()), sgn(d.imag()));
        }
    }
    return sum * inv;
}

/// Grid rows of the measured samples; every mask-true node must be measured
/// exactly once and nothing else may be.
inline std::vector<Eigen::Index> measured_rows(const MultiCoilKSpace& measured, const SamplingMask& mask) {
    std::vector<Eigen::Index> rows;
    std::vector<char> seen(static_cast<std::size_t>(mask.n_x()) * mask.n_y(), 0);
    for (const Coord& c : measured.coords) {
        auto idx = grid_index(c, mask.n_x(), mask.n_y());
        if (!idx || !mask.at(*idx) || seen[*idx])
            throw InvalidArgument("measured k-space does not match the sampling mask");
        seen[*idx] = 1;
        rows.push_back(*idx);
    }
    if (static_cast<Eigen::Index>(rows.size()) != mask.kept_count())
        throw InvalidArgument("measured k-space does not cover every sampled mask location");
    return rows;
}

/// Minimizes mean-L1 data consistency + lambda * residual PISCO over all grid
/// values. PISCO is inactive (lambda treated as 0) for the first
/// precondition_epochs epochs; kernel orientation alternates every epoch.
inline FitResult fit_kspace(const MultiCoilKSpace& measured, const SamplingMask& mask, const FitConfig& cfg) {
    cfg.validate();
    measured.validate();
    const int n_x = mask.n_x(), n_y = mask.n_y();
    const auto rows = measured_rows(measured, mask);
    const Eigen::Index n_c = measured.n_coils();
    const Eigen::Index n_grid = static_cast<Eigen::Index>(n_x) * n_y;
    const double t = measured.coords.empty() ? 0.0 : measured.coords.front().t;

    FitResult res;
    res.fitted.coords = make_cartesian_grid(n_x, n_y, t);
    res.fitted.n_fe = n_x;
    Eigen::MatrixXcd& y = res.fitted.values;
    y = Eigen::MatrixXcd::Zero(n_grid, n_c);
    for (std::size_t i = 0; i < rows.size(); ++i) y.row(rows[i]) = measured.values.row(static_cast<Eigen::Index>(i));

    Eigen::Map<Eigen::VectorXd> params(reinterpret_cast<double*>(y.data()), 2 * y.size());
    Eigen::MatrixXcd grad(n_grid, n_c);
    Eigen::Map<Eigen::VectorXd> grad_real(reinterpret_cast<double*>(grad.data()), 2 * grad.size());
    auto opt = make_optimizer(cfg.optimizer, params.size(), cfg.learning_rate);

    const std::size_t n_m = subset_size(cfg.pisco.geometry.neighbor_count(), static_cast<int>(n_c), cfg.pisco.f_od);
    const std::size_t n_targets = cfg.targets_per_epoch > 0 ? cfg.targets_per_epoch : cfg.pisco.n_s_min * n_m;
    const double t_values[] = {t};

    Eigen::MatrixXcd diff(static_cast<Eigen::Index>(rows.size()), n_c), dc_grad;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        grad.setZero();
        for (std::size_t i = 0; i < rows.size(); ++i)
            diff.row(static_cast<Eigen::Index>(i)) = y.row(rows[i]) - measured.values.row(static_cast<Eigen::Index>(i));
        const double dc = complex_l1(diff, &dc_grad);
        for (std::size_t i = 0; i < rows.size(); ++i) grad.row(rows[i]) += dc_grad.row(static_cast<Eigen::Index>(i));

        double pisco_loss = 0.0;
        const bool active = cfg.lambda > 0.0 && epoch > cfg.precondition_epochs;
        if (active) {
            std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(epoch)};
            std::mt19937_64 rng(seq);
            KernelGeometry g = cfg.pisco.geometry;
            if (epoch % 2 == 1) g.orientation = flipped(g.orientation);
            const auto targets = sample_targets({n_x, n_y, g.extent()}, n_targets, t_values, rng,
                                                cfg.pisco.exclusion_radius);
            const auto part = sort_and_partition(make_patch_pairs(g, targets), static_cast<int>(n_c),
                                                 cfg.pisco.f_od, cfg.pisco.n_s_min);
            const auto coords = flatten_partition(part);
            std::vector<Eigen::Index> idx(coords.size());
            Eigen::MatrixXcd values(static_cast<Eigen::Index>(coords.size()), n_c);
            for (std::size_t i = 0; i < coords.size(); ++i) {
                auto gi = grid_index(coords[i], n_x, n_y);
                if (!gi) throw InvalidArgument("fit: kernel neighbor off the Cartesian grid (delta must be a multiple of 1/n)");
                idx[i] = *gi;
                values.row(static_cast<Eigen::Index>(i)) = y.row(*gi);
            }
            const auto ev = evaluate_residual(part, values, cfg.pisco.alpha, cfg.pisco.gradient_mode,
                                              cfg.pisco.normalize_entries);
            pisco_loss = ev.loss;
            for (std::size_t i = 0; i < coords.size(); ++i)
                grad.row(idx[i]) += cfg.lambda * ev.cotangents.row(static_cast<Eigen::Index>(i));
        }
        const double total = combined_objective(dc, pisco_loss, active ? cfg.lambda : 0.0);
        if (!std::isfinite(total) || !grad.allFinite()) throw Diverged(epoch);
        res.history.push_back({epoch, dc, pisco_loss, total});
        opt->step(params, grad_real);
        if (!params.allFinite()) throw Diverged(epoch);
    }
    return res;
}

struct FillReport {
    double recovered_fraction = 0.0;  // ||y_fit,unsampled||^2 / ||y_ref,unsampled||^2
    double psnr_db = 0.0;             // recon(fitted) vs recon(reference)
    double difference_energy = 0.0;   // ||recon(fitted) - recon(reference)||^2
};

inline FillReport fill_report(const MultiCoilKSpace& fitted, const SamplingMask& mask,
                              const MultiCoilKSpace& reference, const CoilSensitivities& sens) {
    const int n_x = mask.n_x(), n_y = mask.n_y();
    if (!is_cartesian_grid(fitted.coords, n_x, n_y) || !is_cartesian_grid(reference.coords, n_x, n_y))
        throw InvalidArgument("fill_report: fitted and reference must be full grids");
    FillReport r;
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < fitted.n_samples(); ++i)
        if (!mask.at(i)) {
            num += fitted.values.row(i).squaredNorm();
            den += reference.values.row(i).squaredNorm();
        }
    r.recovered_fraction = den > 0.0 ? num / den : 0.0;
    const ComplexImage a = ifft_recon(fitted, sens), b = ifft_recon(reference, sens);
    r.psnr_db = psnr(a, b);
    r.difference_energy = (a - b).squaredNorm();
    return r;
}

}  // namespace pisco
