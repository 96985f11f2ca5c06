#pragma once
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangesam/tensor.hpp"

namespace rangesam::optim {

enum class ParamGroup { Backbone, Head };

template <typename T>
struct Parameter {
    ad::Tensor<T> tensor;
    std::string name;
    ParamGroup group = ParamGroup::Backbone;
};

struct GroupConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
};

// warmup then cosine decay to zero
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                          double base_lr) {
    if (warmup_steps < 0 || total_steps < warmup_steps)
        throw std::invalid_argument("lr_schedule: need 0 <= warmup_steps <= total_steps");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// AdamW with decoupled weight decay. lr_scale multiplies each group's
// base lr (the cosine schedule feeds in through it).
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Parameter<T>>* params, GroupConfig backbone, GroupConfig head,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(params), backbone_(backbone), head_(head), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params->size());
        v_.resize(params->size());
        for (std::size_t i = 0; i < params->size(); ++i) {
            m_[i].assign(static_cast<std::size_t>((*params)[i].tensor.numel()), T(0));
            v_[i].assign(static_cast<std::size_t>((*params)[i].tensor.numel()), T(0));
        }
    }

    void step(double lr_scale = 1.0) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_->size(); ++i) {
            Parameter<T>& p = (*params_)[i];
            const GroupConfig& g = p.group == ParamGroup::Backbone ? backbone_ : head_;
            const double lr = g.lr * lr_scale;
            T* w = p.tensor.data();
            const bool has_grad = p.tensor.has_grad();
            const std::size_t n = static_cast<std::size_t>(p.tensor.numel());
            for (std::size_t j = 0; j < n; ++j) {
                const double gj = has_grad ? static_cast<double>(p.tensor.grad()[j]) : 0.0;
                double mj = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * gj;
                double vj = beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * gj * gj;
                m_[i][j] = static_cast<T>(mj);
                v_[i][j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                double wj = static_cast<double>(w[j]);
                wj -= lr * g.weight_decay * wj;             // decoupled decay
                wj -= lr * mhat / (std::sqrt(vhat) + eps_);
                w[j] = static_cast<T>(wj);
            }
        }
    }

    void zero_grad() {
        for (auto& p : *params_) p.tensor.zero_grad();
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }

private:
    std::vector<Parameter<T>>* params_;
    GroupConfig backbone_, head_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

} // namespace rangesam::optim
