#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "pisco/types.hpp"

namespace pisco {

enum class OptimizerKind { AdamAmsgrad, GradientDescent };

inline std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::AdamAmsgrad ? "adam-amsgrad" : "gradient-descent";
}

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) = 0;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool amsgrad = true;
};

/// Adam; with amsgrad the running maximum of the second moment is used in the
/// denominator (bias corrections applied as in PyTorch).
class Adam final : public Optimizer {
public:
    Adam(Eigen::Index n_params, AdamOptions opts)
        : opts_(opts),
          m_(Eigen::VectorXd::Zero(n_params)),
          v_(Eigen::VectorXd::Zero(n_params)),
          v_max_(Eigen::VectorXd::Zero(n_params)) {
        if (!(opts.learning_rate > 0.0)) throw InvalidArgument("Adam: learning rate must be positive");
    }

    void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) override {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw InvalidArgument("Adam: parameter/gradient size mismatch");
        ++t_;
        m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
        v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
        const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
        const Eigen::VectorXd* second = &v_;
        if (opts_.amsgrad) {
            v_max_ = v_max_.cwiseMax(v_);
            second = &v_max_;
        }
        const double step = opts_.learning_rate / bc1;
        params.array() -= step * m_.array() / (second->array().sqrt() / std::sqrt(bc2) + opts_.epsilon);
    }

    long steps() const { return t_; }

private:
    AdamOptions opts_;
    Eigen::VectorXd m_, v_, v_max_;
    long t_ = 0;
};

class GradientDescent final : public Optimizer {
public:
    explicit GradientDescent(double learning_rate) : lr_(learning_rate) {
        if (!(learning_rate > 0.0)) throw InvalidArgument("gradient descent: learning rate must be positive");
    }
    void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) override {
        params -= lr_ * grad;
    }

private:
    double lr_;
};

inline std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, Eigen::Index n_params, double learning_rate) {
    if (kind == OptimizerKind::AdamAmsgrad) {
        AdamOptions o;
        o.learning_rate = learning_rate;
        return std::make_unique<Adam>(n_params, o);
    }
    return std::make_unique<GradientDescent>(learning_rate);
}

}  // namespace pisco
