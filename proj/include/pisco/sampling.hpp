#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pisco/types.hpp"

namespace pisco {

enum class KernelKind { Cartesian, Radial, RadialEquidistant };

/// y-major: the odd ("3") direction runs along x and the target row is skipped
/// along y, so the target is predicted from the lines above and below it.
/// x-major swaps the axes.
enum class Orientation { YMajor, XMajor };

inline Orientation flipped(Orientation o) {
    return o == Orientation::YMajor ? Orientation::XMajor : Orientation::YMajor;
}

/// Neighbor layout around a target. `a` points along the first kernel
/// direction (centred, includes the target position), `b` points along the
/// second direction (symmetric; excludes the target position when b is even).
/// `delta` is the neighbor spacing in normalized k-space units; for the
/// radial kinds it is the radial step, and the angular step is `delta`
/// radians (radial) or `delta / |target|` radians (radial-equidistant).
struct KernelGeometry {
    KernelKind kind = KernelKind::Cartesian;
    int a = 3;
    int b = 2;
    double delta = 2.0 / 64.0;
    Orientation orientation = Orientation::YMajor;

    /// Integer positions along each kernel direction in units of delta.
    std::vector<double> first_positions() const {
        std::vector<double> p;
        for (int i = 0; i < a; ++i) p.push_back(i - (a - 1) / 2.0);
        return p;
    }
    std::vector<double> second_positions() const {
        std::vector<double> p;
        if (b % 2 == 0) {
            for (int j = -b / 2; j <= b / 2; ++j)
                if (j != 0) p.push_back(j);
        } else {
            for (int j = 0; j < b; ++j) p.push_back(j - (b - 1) / 2.0);
        }
        return p;
    }

    int neighbor_count() const {
        int n = a * b;
        const auto p1 = first_positions(), p2 = second_positions();
        const bool hits_target = std::find(p1.begin(), p1.end(), 0.0) != p1.end() &&
                                 std::find(p2.begin(), p2.end(), 0.0) != p2.end();
        return hits_target ? n - 1 : n;
    }

    void validate() const {
        if (a < 1 || b < 1) throw InvalidArgument("kernel shape must be positive");
        if (!(delta > 0.0)) throw InvalidArgument("kernel delta must be positive");
        if (neighbor_count() < 1) throw InvalidArgument("kernel has no neighbors");
    }

    /// Largest |offset| along either axis, for keeping neighbors inside the grid.
    double extent() const {
        double m1 = 0.0, m2 = 0.0;
        for (double p : first_positions()) m1 = std::max(m1, std::abs(p));
        for (double p : second_positions()) m2 = std::max(m2, std::abs(p));
        if (kind == KernelKind::Cartesian) return std::max(m1, m2) * delta;
        return (m1 + m2 + 1.0) * delta;
    }
};

/// Offsets (dk_x, dk_y, 0) of the neighbors around `target`. Order: second
/// kernel direction outer, first direction inner, zero offset skipped.
inline std::vector<Coord> kernel_offsets(const KernelGeometry& g, const Coord& target) {
    g.validate();
    const auto p1 = g.first_positions(), p2 = g.second_positions();
    std::vector<Coord> out;
    out.reserve(p1.size() * p2.size());
    if (g.kind == KernelKind::Cartesian) {
        for (double j : p2)
            for (double i : p1) {
                if (i == 0.0 && j == 0.0) continue;
                if (g.orientation == Orientation::YMajor)
                    out.push_back({i * g.delta, j * g.delta, 0.0});
                else
                    out.push_back({j * g.delta, i * g.delta, 0.0});
            }
        return out;
    }
    const double rho = radius(target);
    if (rho < 1e-12) throw InvalidArgument("radial kernels are undefined at the k-space origin");
    const double phi = std::atan2(target.ky, target.kx);
    const double dphi = g.kind == KernelKind::Radial ? g.delta : g.delta / rho;
    for (double j : p2)
        for (double i : p1) {
            if (i == 0.0 && j == 0.0) continue;
            const double r = rho + i * g.delta;
            const double a = phi + j * dphi;
            out.push_back({r * std::cos(a) - target.kx, r * std::sin(a) - target.ky, 0.0});
        }
    return out;
}

/// A target coordinate and its kernel neighbors, all at the target's t.
struct PatchPair {
    Coord target;
    std::vector<Coord> neighbors;
};

inline PatchPair make_patch_pair(const KernelGeometry& g, const Coord& target) {
    PatchPair p{target, {}};
    for (const Coord& off : kernel_offsets(g, target))
        p.neighbors.push_back({target.kx + off.kx, target.ky + off.ky, target.t});
    return p;
}

inline std::vector<PatchPair> make_patch_pairs(const KernelGeometry& g, std::span<const Coord> targets) {
    std::vector<PatchPair> out;
    out.reserve(targets.size());
    for (const Coord& t : targets) out.push_back(make_patch_pair(g, t));
    return out;
}

/// Cartesian node lattice targets are drawn from. Nodes closer than `margin`
/// (normalized units) to the grid boundary are not eligible so that kernel
/// neighbors stay on the grid.
struct TargetGrid {
    int n_x = 64;
    int n_y = 64;
    double margin = 0.0;
};

/// Uniformly random grid nodes outside the exclusion radius, each with a t
/// drawn from `t_values`. Nodes are drawn without replacement; when `count`
/// exceeds the eligible set, further independent permutations are appended.
inline std::vector<Coord> sample_targets(const TargetGrid& grid, std::size_t count,
                                         std::span<const double> t_values, std::mt19937_64& rng,
                                         double exclusion_radius) {
    if (count < 1) throw InvalidArgument("sample_targets: count must be >= 1");
    if (exclusion_radius < 0.0) throw InvalidArgument("sample_targets: negative exclusion radius");
    if (t_values.empty()) throw InvalidArgument("sample_targets: no time values");
    const int mx = static_cast<int>(std::ceil(grid.margin * grid.n_x - 1e-9));
    const int my = static_cast<int>(std::ceil(grid.margin * grid.n_y - 1e-9));
    std::vector<Coord> eligible;
    for (int iy = my; iy < grid.n_y - my; ++iy)
        for (int ix = mx; ix < grid.n_x - mx; ++ix) {
            Coord c{static_cast<double>(ix) / grid.n_x - 0.5, static_cast<double>(iy) / grid.n_y - 0.5, 0.0};
            if (radius(c) > exclusion_radius) eligible.push_back(c);
        }
    if (eligible.empty())
        throw InvalidArgument("sample_targets: exclusion radius leaves no eligible grid nodes");

    std::uniform_int_distribution<std::size_t> pick_t(0, t_values.size() - 1);
    std::vector<Coord> out;
    out.reserve(count);
    while (out.size() < count) {
        const std::size_t want = std::min(count - out.size(), eligible.size());
        // partial Fisher-Yates
        for (std::size_t i = 0; i < want; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
            std::swap(eligible[i], eligible[pick(rng)]);
            Coord c = eligible[i];
            c.t = t_values[pick_t(rng)];
            out.push_back(c);
        }
    }
    return out;
}

/// Pairs per subset: ceil(f_od * N_n * N_c^2).
inline std::size_t subset_size(int n_neighbors, int n_coils, double f_od) {
    if (!(f_od > 1.0)) throw InvalidArgument("overdetermination factor must exceed 1");
    const double n_w = static_cast<double>(n_neighbors) * n_coils * n_coils;
    return static_cast<std::size_t>(std::ceil(f_od * n_w - 1e-9));
}

struct SubsetPartition {
    std::vector<std::vector<PatchPair>> subsets;
    std::size_t pairs_per_subset = 0;

    std::size_t size() const { return subsets.size(); }
};

enum class PartitionOrder { ByRadius, Shuffled };

namespace detail {
inline SubsetPartition partition_pairs(std::vector<PatchPair> pairs, int n_coils, double f_od,
                                       std::size_t n_s_min, PartitionOrder order,
                                       std::mt19937_64* rng) {
    if (pairs.empty()) throw InsufficientData("no patch pairs to partition", 1, 0);
    const int n_n = static_cast<int>(pairs.front().neighbors.size());
    for (const auto& p : pairs)
        if (static_cast<int>(p.neighbors.size()) != n_n)
            throw InvalidArgument("patch pairs have differing neighbor counts");
    const std::size_t n_m = subset_size(n_n, n_coils, f_od);

    std::map<double, std::vector<PatchPair>> groups;
    for (auto& p : pairs) groups[p.target.t].push_back(std::move(p));

    SubsetPartition part;
    part.pairs_per_subset = n_m;
    for (auto& [t, group] : groups) {
        if (order == PartitionOrder::ByRadius) {
            std::stable_sort(group.begin(), group.end(), [](const PatchPair& l, const PatchPair& r) {
                return radius(l.target) < radius(r.target);
            });
        } else {
            std::shuffle(group.begin(), group.end(), *rng);
        }
        // trailing remainder shorter than n_m is dropped
        for (std::size_t start = 0; start + n_m <= group.size(); start += n_m)
            part.subsets.emplace_back(std::make_move_iterator(group.begin() + start),
                                      std::make_move_iterator(group.begin() + start + n_m));
    }
    if (part.subsets.size() < n_s_min)
        throw InsufficientData("not enough patch pairs for the minimum number of subsets",
                               n_s_min * n_m, pairs.size());
    return part;
}
}  // namespace detail

/// Groups pairs by t, sorts each group by target radius and chunks it into
/// subsets of ceil(f_od * N_n * N_c^2) pairs.
inline SubsetPartition sort_and_partition(std::vector<PatchPair> pairs, int n_coils, double f_od,
                                          std::size_t n_s_min) {
    return detail::partition_pairs(std::move(pairs), n_coils, f_od, n_s_min, PartitionOrder::ByRadius,
                                   nullptr);
}

/// Same chunking without the radius ordering (random order within each t group).
inline SubsetPartition random_partition(std::vector<PatchPair> pairs, int n_coils, double f_od,
                                        std::size_t n_s_min, std::mt19937_64& rng) {
    return detail::partition_pairs(std::move(pairs), n_coils, f_od, n_s_min, PartitionOrder::Shuffled,
                                   &rng);
}

/// max/min target radius within a subset.
inline double radius_spread(std::span<const PatchPair> subset) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& p : subset) {
        lo = std::min(lo, radius(p.target));
        hi = std::max(hi, radius(p.target));
    }
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

inline std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Cartesian: return "cartesian";
        case KernelKind::Radial: return "radial";
        case KernelKind::RadialEquidistant: return "radial-equidistant";
    }
    return "unknown";
}

}  // namespace pisco
