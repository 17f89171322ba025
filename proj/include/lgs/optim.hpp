#pragma once

#include <cstdint>
#include <vector>

#include "lgs/nn.hpp"

namespace lgs {

struct AdamWConfig {
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamWState {
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
    std::int64_t step = 0;

    /// Zeroed accumulators mirroring `params`.
    static AdamWState for_params(const ParamList& params);
};

/// One AdamW update with decoupled weight decay (theta *= 1 - lr * wd, then
/// the bias-corrected Adam step). A parameter without an accumulated
/// gradient is treated as having gradient zero.
void adamw_step(ParamList& params, AdamWState& state, double lr, const AdamWConfig& config);

/// Cosine annealing from lr_max at step 0 to lr_min at step total_steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min);

}  // namespace lgs
