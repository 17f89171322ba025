#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lgs/tensor.hpp"

namespace lgs {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckOptions {
    float eps = 1e-3f;
    float tol = 1e-3f;
    /// Multiplies the analytic gradient before comparison. Anything other
    /// than 1 exists to prove the checker can fail.
    float analytic_scale = 1.0f;
    /// Elementwise errors are taken relative to max(|analytic|, |numeric|,
    /// floor_fraction * largest gradient magnitude anywhere in the check).
    /// In float32 a central difference cannot resolve much below
    /// ulp(f) / eps, so small entries are judged against the overall scale.
    float floor_fraction = 1.0f;
};

struct ParamCheck {
    std::string name;
    std::size_t elements = 0;
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    bool passed = false;
};

struct CheckReport {
    std::vector<ParamCheck> params;
    bool passed = true;
    double max_rel_error() const;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild the graph from the current parameter values
/// on each call and be deterministic. Throws NumericError if `f` returns a
/// non-finite value. Perturbed evaluations replay the relu and clamp
/// branches of the unperturbed one (see BranchTrace), so a step that
/// crosses a kink still measures the slope of the piece backward used.
CheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                       const GradCheckOptions& options = {});

/// Scalar read-out sum(forward() * weights) for checking a tensor-valued
/// function. Its value at the current parameters is subtracted inside the
/// double accumulation of the sum, so the float result stays near zero and
/// its own rounding does not hide small differences.
std::function<Tensor()> centered_readout(std::function<Tensor()> forward, Tensor weights);

}  // namespace lgs
