#pragma once

#include <cmath>
#include <vector>

#include "ginv/nn.hpp"

namespace ginv {

// Adaptive-moment optimizer over a fixed parameter list; gradients are passed
// per step as tensors aligned with the parameter order.
template <typename T>
class Adam {
public:
    Adam(std::vector<nn::ParamRef<T>> params, double lr, double beta1, double beta2,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (auto& p : params_) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }

    void step(const std::vector<Tensor<T>*>& grads) {
        GINV_CHECK(grads.size() == params_.size(), "adam: gradient list mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t k = 0; k < params_.size(); ++k) {
            Tensor<T>& p = *params_[k].value;
            const Tensor<T>& g = *grads[k];
            GINV_CHECK(g.same_shape(p), "adam: gradient shape mismatch at " + params_[k].name);
            Tensor<T>& m = m_[k];
            Tensor<T>& v = v_[k];
            for (int64_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = b1_ * static_cast<double>(m[i]) + (1.0 - b1_) * gi;
                const double vi = b2_ * static_cast<double>(v[i]) + (1.0 - b2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    std::vector<nn::ParamRef<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

}  // namespace ginv
