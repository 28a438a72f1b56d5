#pragma once

// SGD with classical momentum and decoupled-from-nothing L2 weight decay:
// the decay term is folded into the gradient before the momentum update,
//   v <- m*v + (g + wd*p),  p <- p - lr*v.
// step() consumes and zeroes parameter gradients.

#include <utility>

#include "pareid/tensor.hpp"

namespace pareid {

inline double cosine_lr(int step, int total_steps, double base_lr) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
    if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
    if (step > total_steps) step = total_steps;
    const double t = double(step) / double(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <class S>
class SgdMomentum {
public:
    SgdMomentum(std::vector<std::pair<std::string, Tensor<S>>> params, S momentum, S weight_decay)
        : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
        velocity_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i)
            velocity_[i].assign(params_[i].second.numel(), S(0));
    }

    void step(S lr) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& [name, p] = params_[i];
            if (!p.has_grad())
                throw std::logic_error("sgd_step: parameter '" + name + "' has no gradient");
            auto& g = p.grad();
            auto& v = velocity_[i];
            auto& val = p.data();
            for (std::size_t k = 0; k < val.size(); ++k) {
                const S eff = g[k] + weight_decay_ * val[k];
                v[k] = momentum_ * v[k] + eff;
                val[k] -= lr * v[k];
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    const std::vector<std::pair<std::string, Tensor<S>>>& params() const { return params_; }

    // Momentum buffers exposed as named tensvalues for checkpointing.
    std::vector<std::pair<std::string, std::vector<S>*>> state() {
        std::vector<std::pair<std::string, std::vector<S>*>> out;
        for (std::size_t i = 0; i < params_.size(); ++i)
            out.emplace_back("momentum." + params_[i].first, &velocity_[i]);
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<S>>> params_;
    std::vector<std::vector<S>> velocity_;
    S momentum_, weight_decay_;
};

}  // namespace pareid
