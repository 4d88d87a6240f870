#pragma once

#include "tg3d/params.hpp"

#include <cmath>
#include <vector>

namespace tg3d {

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    // params and grads must be parallel (same names, same order).
    void step(const ParamSet& params, const ParamSet& grads) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(Arr::Zero(p.size));
                v_.emplace_back(Arr::Zero(p.size));
            }
        }
        check(m_.size() == params.size(), "Adam: parameter set changed");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            check(params[i].size == grads[i].size, "Adam: grad size mismatch");
            Eigen::Map<Arr> p(params[i].data, params[i].size);
            Eigen::Map<const Arr> g(grads[i].data, grads[i].size);
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
            p -= lr_ * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Arr> m_, v_;
};

} // namespace tg3d
