#include "lgs/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
    Tensor out = f();
    if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar, got " + shape_str(out.shape()));
    const double v = out.item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
    return v;
}

struct Entry {
    double analytic = 0.0;
    double numeric = 0.0;
};

}  // namespace

double CheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
}

CheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                       const GradCheckOptions& options) {
    if (!(options.eps > 0.0f)) throw ContractError("grad_check: eps must be positive");

    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    {
        Tensor loss = f();
        const double v = loss.numel() == 1 ? static_cast<double>(loss.item()) : 0.0;
        if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
        backward(loss);
    }

    NoGradGuard no_grad;
    BranchTrace trace;
    trace.record();
    eval_scalar(f);
    auto replayed = [&] {
        trace.replay();
        const double v = eval_scalar(f);
        if (!trace.replay_complete()) throw ContractError("grad_check: function took a different path on re-evaluation");
        return v;
    };

    std::vector<std::vector<Entry>> entries(params.size());
    double scale = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        const auto n = static_cast<std::size_t>(p.tensor.numel());
        auto& es = entries[k];
        es.resize(n);
        if (p.tensor.has_grad()) {
            auto g = p.tensor.grad();
            for (std::size_t i = 0; i < n; ++i) es[i].analytic = static_cast<double>(g[i]) * options.analytic_scale;
        }
        auto data = p.tensor.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const float original = data[i];
            const float hi = original + options.eps;
            const float lo = original - options.eps;
            data[i] = hi;
            const double f_hi = replayed();
            data[i] = lo;
            const double f_lo = replayed();
            data[i] = original;
            // divide by the step actually representable in float
            es[i].numeric = (f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
            scale = std::max({scale, std::abs(es[i].numeric), std::abs(es[i].analytic)});
        }
        p.tensor.zero_grad();
    }

    const double floor = std::max(static_cast<double>(options.floor_fraction) * scale, 1e-12);
    CheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        ParamCheck check;
        check.name = params[k].name;
        check.elements = entries[k].size();
        for (const auto& e : entries[k]) {
            check.max_abs_analytic = std::max(check.max_abs_analytic, std::abs(e.analytic));
            const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
            check.max_rel_error = std::max(check.max_rel_error, std::abs(e.analytic - e.numeric) / denom);
        }
        check.passed = check.max_rel_error < options.tol;
        report.passed = report.passed && check.passed;
        report.params.push_back(std::move(check));
    }
    return report;
}

std::function<Tensor()> centered_readout(std::function<Tensor()> forward, Tensor weights) {
    Tensor offset;
    {
        NoGradGuard guard;
        offset = Tensor::full({1}, -sum(mul(forward(), weights)).item());
    }
    return [forward = std::move(forward), weights = std::move(weights), offset] {
        Tensor out = forward();
        return sum(concat({reshape(mul(out, weights), {out.numel()}), offset}, 0));
    };
}

}  // namespace lgs
