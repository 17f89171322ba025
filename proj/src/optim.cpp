#include "lgs/optim.hpp"

#include <cmath>
#include <numbers>

#include "lgs/errors.hpp"

namespace lgs {

AdamWState AdamWState::for_params(const ParamList& params) {
    AdamWState s;
    for (const auto& p : params) {
        s.first_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
        s.second_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    }
    return s;
}

void adamw_step(ParamList& params, AdamWState& state, double lr, const AdamWConfig& config) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw DimensionError("adamw: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                             " tensors, model has " + std::to_string(params.size()));
    }
    ++state.step;
    const auto t = static_cast<double>(state.step);
    const auto b1 = static_cast<float>(config.beta1);
    const auto b2 = static_cast<float>(config.beta2);
    const auto bias1 = static_cast<float>(1.0 - std::pow(config.beta1, t));
    const auto bias2 = static_cast<float>(1.0 - std::pow(config.beta2, t));
    const auto lr_f = static_cast<float>(lr);
    const auto decay = static_cast<float>(1.0 - lr * config.weight_decay);
    const auto eps = static_cast<float>(config.eps);

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].tensor;
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (static_cast<std::int64_t>(m.size()) != p.numel() || static_cast<std::int64_t>(v.size()) != p.numel()) {
            throw DimensionError("adamw: state for " + params[k].name + " does not match " + shape_str(p.shape()));
        }
        auto theta = p.mutable_data();
        const bool has_grad = p.has_grad();
        auto g = p.grad();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const float gi = has_grad ? g[i] : 0.0f;
            theta[i] *= decay;
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            const float m_hat = m[i] / bias1;
            const float v_hat = v[i] / bias2;
            theta[i] -= lr_f * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
    if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            "]");
    }
    const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
    // Convex combination keeps both endpoints exact.
    return lr_max * w + lr_min * (1.0 - w);
}

}  // namespace lgs
