#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "pisco/kspace.hpp"
#include "pisco/sampling.hpp"
#include "pisco/types.hpp"

namespace pisco {

/// Maps a batch of coordinates to one row of N_c complex values per coordinate.
using ValueEvaluator = std::function<Eigen::MatrixXcd(std::span<const Coord>)>;

/// T (N_m x N_c) and P (N_m x N_n*N_c) for one subset. Column n*N_c + c of P
/// holds coil c of neighbor n.
struct SubsetSystem {
    Eigen::MatrixXcd targets;
    Eigen::MatrixXcd patches;
    double t = 0.0;
};

struct WeightSet {
    Eigen::MatrixXcd weights;  // (N_n*N_c) x N_c
    double alpha = 0.0;
    double residual_fro = 0.0;
};

/// Coordinates referenced by a run of patch pairs, laid out pair by pair as
/// [target, neighbor 0, ..., neighbor N_n-1].
inline std::vector<Coord> flatten_coords(std::span<const PatchPair> pairs) {
    std::vector<Coord> out;
    if (pairs.empty()) return out;
    out.reserve(pairs.size() * (1 + pairs.front().neighbors.size()));
    for (const auto& p : pairs) {
        out.push_back(p.target);
        out.insert(out.end(), p.neighbors.begin(), p.neighbors.end());
    }
    return out;
}

/// Builds (T, P) from values laid out as by flatten_coords, starting at `row0`.
inline SubsetSystem system_from_values(const Eigen::MatrixXcd& values, Eigen::Index row0,
                                       Eigen::Index n_pairs, Eigen::Index n_neighbors, double t) {
    const Eigen::Index n_c = values.cols();
    const Eigen::Index stride = 1 + n_neighbors;
    SubsetSystem sys;
    sys.t = t;
    sys.targets.resize(n_pairs, n_c);
    sys.patches.resize(n_pairs, n_neighbors * n_c);
    for (Eigen::Index i = 0; i < n_pairs; ++i) {
        const Eigen::Index base = row0 + i * stride;
        sys.targets.row(i) = values.row(base);
        for (Eigen::Index n = 0; n < n_neighbors; ++n)
            sys.patches.block(i, n * n_c, 1, n_c) = values.row(base + 1 + n);
    }
    return sys;
}

inline SubsetSystem assemble_system(std::span<const PatchPair> subset, const ValueEvaluator& values_at) {
    if (subset.empty()) throw InvalidArgument("assemble_system: empty subset");
    const auto coords = flatten_coords(subset);
    const Eigen::MatrixXcd values = values_at(coords);
    if (values.rows() != static_cast<Eigen::Index>(coords.size()))
        throw InvalidArgument("assemble_system: evaluator returned the wrong number of rows");
    return system_from_values(values, 0, static_cast<Eigen::Index>(subset.size()),
                              static_cast<Eigen::Index>(subset.front().neighbors.size()),
                              subset.front().target.t);
}

/// Regularized normal-equation factorization shared by the solve and its adjoint.
class NormalSolver {
public:
    NormalSolver(const Eigen::MatrixXcd& patches, double alpha) : alpha_(alpha) {
        if (alpha < 0.0) throw InvalidArgument("Tikhonov weight must be non-negative");
        const Eigen::Index n = patches.cols();
        Eigen::MatrixXcd gram(n, n);
        gram.setZero();
        gram.selfadjointView<Eigen::Lower>().rankUpdate(patches.adjoint());
        gram = gram.selfadjointView<Eigen::Lower>();
        gram.diagonal().array() += alpha;

        llt_.compute(gram);
        bool ok = llt_.info() == Eigen::Success;
        if (ok) {
            const auto d = llt_.matrixLLT().diagonal().real().cwiseAbs();
            const double lo = d.minCoeff(), hi = d.maxCoeff();
            ok = std::isfinite(lo) && hi > 0.0 && lo * lo > 1e-14 * hi * hi;
        }
        if (!ok) {
            cod_.compute(gram);
            use_cod_ = true;
            if (cod_.rank() < n && alpha == 0.0)
                throw IllConditioned("singular normal matrix with alpha = 0; raise alpha");
        }
    }

    template <typename Rhs>
    Eigen::MatrixXcd solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        return use_cod_ ? Eigen::MatrixXcd(cod_.solve(rhs)) : Eigen::MatrixXcd(llt_.solve(rhs));
    }

    double alpha() const { return alpha_; }
    bool used_fallback() const { return use_cod_; }

private:
    double alpha_;
    Eigen::LLT<Eigen::MatrixXcd> llt_;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod_;
    bool use_cod_ = false;
};

/// W = argmin ||P W - T||_F^2 + alpha ||W||_F^2 = (P^H P + alpha I)^-1 P^H T.
inline WeightSet solve_weights(const SubsetSystem& sys, double alpha) {
    if (sys.targets.rows() != sys.patches.rows())
        throw InvalidArgument("solve_weights: T and P row counts differ");
    NormalSolver solver(sys.patches, alpha);
    WeightSet ws;
    ws.alpha = alpha;
    ws.weights = solver.solve(sys.patches.adjoint() * sys.targets);
    if (!ws.weights.allFinite()) throw IllConditioned("solve_weights: non-finite weights");
    ws.residual_fro = (sys.patches * ws.weights - sys.targets).norm();
    return ws;
}

/// Evaluator backed by samples on the n x n Cartesian grid of `grid.n_fe`.
class GridLookup {
public:
    GridLookup(const MultiCoilKSpace& data, int n_x, int n_y) : data_(&data), n_x_(n_x), n_y_(n_y) {
        for (Eigen::Index i = 0; i < data.n_samples(); ++i)
            if (auto idx = grid_index(data.coords[i], n_x, n_y)) rows_.emplace(*idx, i);
    }

    std::optional<Eigen::Index> row_of(const Coord& c) const {
        auto idx = grid_index(c, n_x_, n_y_);
        if (!idx) return std::nullopt;
        auto it = rows_.find(*idx);
        if (it == rows_.end()) return std::nullopt;
        return it->second;
    }

    Eigen::MatrixXcd operator()(std::span<const Coord> coords) const {
        Eigen::MatrixXcd out(static_cast<Eigen::Index>(coords.size()), data_->n_coils());
        for (std::size_t i = 0; i < coords.size(); ++i) {
            auto row = row_of(coords[i]);
            if (!row) throw InvalidArgument("grid lookup: coordinate not present in k-space data");
            out.row(static_cast<Eigen::Index>(i)) = data_->values.row(*row);
        }
        return out;
    }

private:
    const MultiCoilKSpace* data_;
    int n_x_, n_y_;
    std::unordered_map<Eigen::Index, Eigen::Index> rows_;
};

/// GRAPPA calibration: one weight set from every target/patch pair whose
/// neighbors all lie inside the (fully sampled) ACS region. The ACS grid is
/// square with spacing 1 / n_fe.
inline WeightSet calibrate_grappa(const MultiCoilKSpace& acs, const KernelGeometry& geometry, double alpha) {
    acs.validate();
    if (acs.n_fe < 2) throw InvalidArgument("calibrate_grappa: n_fe must be set");
    GridLookup lookup(acs, acs.n_fe, acs.n_fe);
    std::vector<PatchPair> pairs;
    for (const Coord& c : acs.coords) {
        if (!lookup.row_of(c)) continue;
        if (geometry.kind != KernelKind::Cartesian && radius(c) < 1e-12) continue;
        PatchPair p = make_patch_pair(geometry, c);
        bool complete = true;
        for (const Coord& n : p.neighbors)
            if (!lookup.row_of(n)) {
                complete = false;
                break;
            }
        if (complete) pairs.push_back(std::move(p));
    }
    const std::size_t n_w = static_cast<std::size_t>(geometry.neighbor_count()) * acs.n_coils() * acs.n_coils();
    if (pairs.size() < n_w) throw InsufficientData("ACS region too small for calibration", n_w, pairs.size());
    const auto sys = assemble_system(pairs, std::cref(lookup));
    return solve_weights(sys, alpha);
}

/// Targets estimated from patches: T_hat = P W.
inline Eigen::MatrixXcd predict_targets(const WeightSet& w, const Eigen::MatrixXcd& patches) {
    return patches * w.weights;
}

}  // namespace pisco
