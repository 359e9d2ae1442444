#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "pisco/kspace.hpp"
#include "pisco/loss.hpp"
#include "pisco/optim.hpp"
#include "pisco/sampling.hpp"

namespace pisco {

/// Gaussian Fourier features: B (n_features x 3) ~ N(0, sigma^2), fixed after
/// construction. encode(c) = [sin(2 pi B c), cos(2 pi B c)].
class FeatureEncoding {
public:
    FeatureEncoding() = default;
    FeatureEncoding(int n_features, double sigma, std::mt19937_64& rng) {
        if (n_features < 1) throw InvalidArgument("encoding: n_features must be >= 1");
        if (!(sigma >= 0.0)) throw InvalidArgument("encoding: sigma must be non-negative");
        std::normal_distribution<double> dist(0.0, 1.0);
        B_.resize(n_features, 3);
        for (Eigen::Index j = 0; j < B_.cols(); ++j)
            for (Eigen::Index i = 0; i < B_.rows(); ++i) B_(i, j) = sigma * dist(rng);
    }
    explicit FeatureEncoding(Eigen::MatrixXd B) : B_(std::move(B)) {
        if (B_.cols() != 3 || B_.rows() < 1) throw InvalidArgument("encoding: B must be n_features x 3");
    }

    int n_features() const { return static_cast<int>(B_.rows()); }
    int output_dim() const { return 2 * n_features(); }
    const Eigen::MatrixXd& frequencies() const { return B_; }

    /// One column per coordinate.
    Eigen::MatrixXd encode(std::span<const Coord> coords) const {
        Eigen::MatrixXd c(3, static_cast<Eigen::Index>(coords.size()));
        for (std::size_t i = 0; i < coords.size(); ++i)
            c.col(static_cast<Eigen::Index>(i)) << coords[i].kx, coords[i].ky, coords[i].t;
        const Eigen::ArrayXXd phase = (2.0 * std::numbers::pi) * (B_ * c).array();
        Eigen::MatrixXd out(output_dim(), c.cols());
        out.topRows(B_.rows()) = phase.sin().matrix();
        out.bottomRows(B_.rows()) = phase.cos().matrix();
        return out;
    }

    Eigen::VectorXd encode(const Coord& c) const { return encode(std::span<const Coord>(&c, 1)).col(0); }

private:
    Eigen::MatrixXd B_;
};

struct NikArchitecture {
    int n_features = 256;
    double sigma = 6.0;
    int hidden = 512;
    /// Fully connected layers including the linear output layer.
    int layers = 4;
    double omega = 20.0;
    int n_coils = 4;

    void validate() const {
        if (n_features < 1 || hidden < 1 || n_coils < 1) throw InvalidArgument("nik: sizes must be positive");
        if (layers < 2) throw InvalidArgument("nik: need at least 2 layers");
        if (!(omega > 0.0)) throw InvalidArgument("nik: omega must be positive");
        if (!(sigma >= 0.0)) throw InvalidArgument("nik: sigma must be non-negative");
    }
};

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;  // input of each layer
    std::vector<Eigen::MatrixXd> phases;  // omega * (W x + b) of each sine layer
};

/// Fourier features -> (layers - 1) sine layers sin(omega (W x + b)) -> linear
/// output of 2 N_c reals; outputs (2c, 2c+1) are coil c's real and imaginary part.
/// Parameters are one flat vector: per layer, W (out x in, column-major) then b.
class NikModel {
public:
    NikModel() = default;
    NikModel(const NikArchitecture& arch, std::uint64_t seed) : arch_(arch), seed_(seed) {
        arch.validate();
        std::mt19937_64 rng(seed);
        encoding_ = FeatureEncoding(arch.n_features, arch.sigma, rng);
        layout();
        for (int l = 0; l < n_layers(); ++l) {
            const double in = static_cast<double>(in_dim(l));
            const double w_bound = l == 0 ? 1.0 / in : std::sqrt(6.0 / in) / arch.omega;
            const double b_bound = 1.0 / std::sqrt(in);
            std::uniform_real_distribution<double> wd(-w_bound, w_bound), bd(-b_bound, b_bound);
            auto W = weight(l);
            for (Eigen::Index j = 0; j < W.cols(); ++j)
                for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = wd(rng);
            auto b = bias(l);
            for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = bd(rng);
        }
    }

    /// Rebuilds a model from stored parts (checkpoint loading).
    NikModel(const NikArchitecture& arch, FeatureEncoding encoding, Eigen::VectorXd params, std::uint64_t seed = 0)
        : arch_(arch), encoding_(std::move(encoding)), seed_(seed) {
        arch.validate();
        if (encoding_.n_features() != arch.n_features) throw InvalidArgument("nik: encoding size mismatch");
        layout();
        if (params.size() != params_.size()) throw InvalidArgument("nik: parameter count mismatch");
        params_ = std::move(params);
    }

    const NikArchitecture& architecture() const { return arch_; }
    const FeatureEncoding& encoding() const { return encoding_; }
    std::uint64_t seed() const { return seed_; }
    int n_layers() const { return arch_.layers; }
    int n_coils() const { return arch_.n_coils; }
    Eigen::Index in_dim(int l) const { return l == 0 ? encoding_.output_dim() : arch_.hidden; }
    Eigen::Index out_dim(int l) const { return l == n_layers() - 1 ? 2 * arch_.n_coils : arch_.hidden; }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }
    Eigen::Index n_params() const { return params_.size(); }

    Eigen::Map<Eigen::MatrixXd> weight(int l) { return {params_.data() + offsets_[l], out_dim(l), in_dim(l)}; }
    Eigen::Map<const Eigen::MatrixXd> weight(int l) const {
        return {params_.data() + offsets_[l], out_dim(l), in_dim(l)};
    }
    Eigen::Map<Eigen::VectorXd> bias(int l) {
        return {params_.data() + offsets_[l] + out_dim(l) * in_dim(l), out_dim(l)};
    }
    Eigen::Map<const Eigen::VectorXd> bias(int l) const {
        return {params_.data() + offsets_[l] + out_dim(l) * in_dim(l), out_dim(l)};
    }

    /// One row of N_c complex values per coordinate, in input order.
    Eigen::MatrixXcd forward(std::span<const Coord> coords) const { return forward_impl(coords, nullptr); }
    Eigen::MatrixXcd forward(std::span<const Coord> coords, ForwardCache& cache) const {
        return forward_impl(coords, &cache);
    }

    /// Accumulates d loss / d params into `grad` given output cotangents
    /// (dL/dRe + i dL/dIm, one row per coordinate).
    void backward(const ForwardCache& cache, const Eigen::MatrixXcd& cotangents, Eigen::Ref<Eigen::VectorXd> grad) const {
        if (grad.size() != params_.size()) throw InvalidArgument("nik: gradient size mismatch");
        const Eigen::Index batch = cotangents.rows();
        Eigen::MatrixXd delta(2 * arch_.n_coils, batch);
        for (Eigen::Index i = 0; i < batch; ++i)
            for (int c = 0; c < arch_.n_coils; ++c) {
                delta(2 * c, i) = cotangents(i, c).real();
                delta(2 * c + 1, i) = cotangents(i, c).imag();
            }
        for (int l = n_layers() - 1; l >= 0; --l) {
            if (l < n_layers() - 1)
                delta.array() *= arch_.omega * cache.phases[static_cast<std::size_t>(l)].array().cos();
            const Eigen::Index o = out_dim(l), in = in_dim(l);
            Eigen::Map<Eigen::MatrixXd> gW(grad.data() + offsets_[l], o, in);
            Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + o * in, o);
            gW.noalias() += delta * cache.inputs[static_cast<std::size_t>(l)].transpose();
            gb += delta.rowwise().sum();
            if (l > 0) delta = weight(l).transpose() * delta;
        }
    }

private:
    void layout() {
        offsets_.assign(static_cast<std::size_t>(n_layers()) + 1, 0);
        for (int l = 0; l < n_layers(); ++l)
            offsets_[l + 1] = offsets_[l] + out_dim(l) * in_dim(l) + out_dim(l);
        params_ = Eigen::VectorXd::Zero(offsets_.back());
    }

    Eigen::MatrixXcd forward_impl(std::span<const Coord> coords, ForwardCache* cache) const {
        Eigen::MatrixXd x = encoding_.encode(coords);
        if (cache) {
            cache->inputs.assign(static_cast<std::size_t>(n_layers()), {});
            cache->phases.assign(static_cast<std::size_t>(n_layers()) - 1, {});
        }
        for (int l = 0; l < n_layers(); ++l) {
            Eigen::MatrixXd z = weight(l) * x;
            z.colwise() += bias(l);
            if (cache) cache->inputs[static_cast<std::size_t>(l)] = std::move(x);
            if (l < n_layers() - 1) {
                z *= arch_.omega;
                x = z.array().sin().matrix();
                if (cache) cache->phases[static_cast<std::size_t>(l)] = std::move(z);
            } else {
                x = std::move(z);
            }
        }
        Eigen::MatrixXcd out(x.cols(), arch_.n_coils);
        for (Eigen::Index i = 0; i < x.cols(); ++i)
            for (int c = 0; c < arch_.n_coils; ++c) out(i, c) = cdouble(x(2 * c, i), x(2 * c + 1, i));
        return out;
    }

    NikArchitecture arch_;
    FeatureEncoding encoding_;
    std::uint64_t seed_ = 0;
    std::vector<Eigen::Index> offsets_;
    Eigen::VectorXd params_;
};

/// Mean over entries of |pred - target| / (|target| + epsilon), with optional
/// cotangents (the denominator is treated as a constant).
inline double dc_loss(const Eigen::MatrixXcd& pred, const Eigen::MatrixXcd& target, double epsilon,
                      Eigen::MatrixXcd* cotangents = nullptr) {
    if (!(epsilon > 0.0)) throw InvalidArgument("dc_loss: epsilon must be positive");
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw InvalidArgument("dc_loss: shape mismatch");
    if (pred.size() == 0) throw InvalidArgument("dc_loss: empty input");
    const double inv = 1.0 / static_cast<double>(pred.size());
    if (cotangents) cotangents->resize(pred.rows(), pred.cols());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const cdouble d = pred.data()[i] - target.data()[i];
        const double w = 1.0 / (std::abs(target.data()[i]) + epsilon);
        const double m = std::abs(d);
        sum += w * m;
        if (cotangents) cotangents->data()[i] = m > 0.0 ? (inv * w / m) * d : cdouble(0.0);
    }
    return sum * inv;
}

using AcquiredSet = MultiCoilKSpace;

struct TrainConfig {
    int epochs = 5000;
    std::size_t batch_size = 10000;
    double learning_rate = 1e-5;
    OptimizerKind optimizer = OptimizerKind::AdamAmsgrad;
    int e_pre = 1000;
    double lambda = 0.0;
    PiscoConfig pisco;
    /// 0 selects 1e-3 * median |y_acq|.
    double dc_epsilon = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0) throw InvalidArgument("train: epochs must be non-negative");
        if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw InvalidArgument("train: learning rate must be positive");
        if (e_pre < 0 || e_pre > epochs) throw InvalidArgument("train: e_pre must lie in [0, epochs]");
        if (lambda < 0.0) throw InvalidArgument("train: lambda must be non-negative");
        if (dc_epsilon < 0.0) throw InvalidArgument("train: dc_epsilon must be non-negative");
        pisco.validate();
    }
};

inline double default_dc_epsilon(const AcquiredSet& acq) { return 1e-3 * median_magnitude(acq.values); }

struct NikObjective {
    double dc = 0.0;
    double pisco = 0.0;
    double total = 0.0;
    Eigen::VectorXd grad;
};

/// dc_loss on (coords, targets) + lambda * residual PISCO on `partition`, with
/// the parameter gradient. PISCO coordinates go through the network, so the
/// gradient reaches the parameters via every target and neighbor prediction.
inline NikObjective nik_objective(const NikModel& model, std::span<const Coord> coords,
                                  const Eigen::MatrixXcd& targets, double epsilon, double lambda,
                                  const SubsetPartition* partition, const PiscoConfig& pisco) {
    NikObjective obj;
    obj.grad = Eigen::VectorXd::Zero(model.n_params());
    ForwardCache cache;
    Eigen::MatrixXcd cot;
    obj.dc = dc_loss(model.forward(coords, cache), targets, epsilon, &cot);
    model.backward(cache, cot, obj.grad);
    if (partition && lambda > 0.0) {
        const auto pc = flatten_partition(*partition);
        const Eigen::MatrixXcd values = model.forward(pc, cache);
        const auto ev = evaluate_residual(*partition, values, pisco.alpha, pisco.gradient_mode,
                                          pisco.normalize_entries);
        obj.pisco = ev.loss;
        model.backward(cache, lambda * ev.cotangents, obj.grad);
    }
    obj.total = combined_objective(obj.dc, obj.pisco, partition ? lambda : 0.0);
    return obj;
}

/// Distinct t values of the acquired coordinates, ascending.
inline std::vector<double> frame_times(const AcquiredSet& acq) {
    std::vector<double> t;
    for (const auto& c : acq.coords) t.push_back(c.t);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

/// PISCO subsets for one epoch: n_s_min subsets of N_m grid targets (spacing
/// 1/n_fe), each subset at one t drawn from `times`.
inline SubsetPartition draw_training_partition(const PiscoConfig& cfg, const KernelGeometry& g, int n_fe,
                                               int n_coils, std::span<const double> times, std::mt19937_64& rng) {
    const std::size_t n_m = subset_size(g.neighbor_count(), n_coils, cfg.f_od);
    std::uniform_int_distribution<std::size_t> pick(0, times.size() - 1);
    std::vector<PatchPair> pairs;
    pairs.reserve(cfg.n_s_min * n_m);
    for (std::size_t s = 0; s < cfg.n_s_min; ++s) {
        const double t[] = {times[pick(rng)]};
        for (const Coord& c : sample_targets({n_fe, n_fe, g.extent()}, n_m, t, rng, cfg.exclusion_radius))
            pairs.push_back(make_patch_pair(g, c));
    }
    return sort_and_partition(std::move(pairs), n_coils, cfg.f_od, cfg.n_s_min);
}

struct TrainResult {
    NikModel model;
    std::vector<HistoryRow> history;
    double dc_epsilon = 0.0;
};

/// Epoch e: a DC batch of min(batch_size, N_acq) acquired pairs; for e > e_pre
/// and lambda > 0 a fresh PISCO partition (orientation alternating per epoch);
/// one optimizer step on dc + lambda * pisco.
inline TrainResult train(const AcquiredSet& acq, const NikArchitecture& arch, const TrainConfig& cfg) {
    cfg.validate();
    acq.validate();
    if (acq.n_samples() == 0) throw InsufficientData("train: no acquired samples", 1, 0);
    if (acq.n_coils() != arch.n_coils) throw InvalidArgument("train: coil count differs from the architecture");
    if (acq.n_fe < 2) throw InvalidArgument("train: n_fe must be set on the acquired set");

    TrainResult res{NikModel(arch, cfg.seed), {}, cfg.dc_epsilon > 0.0 ? cfg.dc_epsilon : default_dc_epsilon(acq)};
    if (!(res.dc_epsilon > 0.0)) throw InvalidArgument("train: acquired data is all zero");
    NikModel& model = res.model;
    auto opt = make_optimizer(cfg.optimizer, model.n_params(), cfg.learning_rate);
    const auto times = frame_times(acq);
    const std::size_t n_acq = static_cast<std::size_t>(acq.n_samples());
    const std::size_t batch = std::min(cfg.batch_size, n_acq);

    std::vector<std::size_t> order(n_acq);
    for (std::size_t i = 0; i < n_acq; ++i) order[i] = i;
    std::vector<Coord> coords(batch);
    Eigen::MatrixXcd targets(static_cast<Eigen::Index>(batch), acq.n_coils());

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(epoch), std::uint64_t{0x4e494b}};
        std::mt19937_64 rng(seq);
        if (batch < n_acq)
            for (std::size_t i = 0; i < batch; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n_acq - 1);
                std::swap(order[i], order[pick(rng)]);
            }
        for (std::size_t i = 0; i < batch; ++i) {
            coords[i] = acq.coords[order[i]];
            targets.row(static_cast<Eigen::Index>(i)) = acq.values.row(static_cast<Eigen::Index>(order[i]));
        }

        std::optional<SubsetPartition> part;
        if (cfg.lambda > 0.0 && epoch > cfg.e_pre) {
            KernelGeometry g = cfg.pisco.geometry;
            if (epoch % 2 == 1) g.orientation = flipped(g.orientation);
            part = draw_training_partition(cfg.pisco, g, acq.n_fe, arch.n_coils, times, rng);
        }
        const auto obj = nik_objective(model, coords, targets, res.dc_epsilon, cfg.lambda,
                                       part ? &*part : nullptr, cfg.pisco);
        if (!std::isfinite(obj.total) || !obj.grad.allFinite()) throw Diverged(epoch);
        res.history.push_back({epoch, obj.dc, obj.pisco, obj.total});
        opt->step(model.params(), obj.grad);
    }
    return res;
}

inline MultiCoilKSpace predict_grid(const NikModel& model, double t, int n_x, int n_y) {
    MultiCoilKSpace k;
    k.coords = make_cartesian_grid(n_x, n_y, t);
    k.n_fe = n_x;
    k.values = model.forward(k.coords);
    return k;
}

/// Network prediction on the full grid at time t, coil-combined.
inline ComplexImage infer_frame(const NikModel& model, double t, int n_x, int n_y, const CoilSensitivities& sens) {
    if (sens.n_coils() != model.n_coils()) throw InvalidArgument("infer_frame: coil count mismatch");
    return ifft_recon(predict_grid(model, t, n_x, n_y), sens);
}

}  // namespace pisco
