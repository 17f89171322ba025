#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgs/gradcheck.hpp"

namespace lgs {

struct ComponentCheck {
    std::string component;
    CheckReport report;
};

/// Finite-difference checks of every layer type, each decoder sub-step, the
/// losses and a reduced one-stage model (8x8 input, stem stride 1). Inputs and
/// weights are drawn from `seed`.
std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace lgs
