#include "lgs/loss.hpp"

#include <algorithm>
#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

namespace {

constexpr double kProbFloor = 1e-7;

void check_pair(const Tensor& probs, const Tensor& target, const char* op) {
    if (probs.shape() != target.shape()) {
        throw DimensionError(std::string(op) + ": probabilities " + shape_str(probs.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
}

}  // namespace

Tensor dice_loss(const Tensor& probs, const Tensor& target, float eps) {
    check_pair(probs, target, "dice_loss");
    auto p = probs.data(), t = target.data();
    double s_pt = 0.0, s_p = 0.0, s_t = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        s_pt += static_cast<double>(p[i]) * t[i];
        s_p += p[i];
        s_t += t[i];
    }
    const double num = 2.0 * s_pt + eps;
    const double den = s_p + s_t + eps;
    const auto value = static_cast<float>(1.0 - num / den);
    return make_op_result(
        {1}, {value}, {probs, target},
        [num, den](const TensorImpl& o, std::span<const ImplPtr> in) {
            if (!in[0]->requires_grad) return;
            auto g = in[0]->grad_buffer();
            const auto& tv = in[1]->data;
            const double upstream = o.grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += static_cast<float>(-upstream * (2.0 * tv[i] * den - num) / (den * den));
            }
        },
        "dice_loss");
}

Tensor bce_loss(const Tensor& probs, const Tensor& target) {
    check_pair(probs, target, "bce_loss");
    auto p = probs.data(), t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double raw = p[i];
        const std::uint8_t side = BranchTrace::branch(raw < kProbFloor ? 1 : (raw > 1.0 - kProbFloor ? 2 : 0));
        const double pc = side == 1 ? kProbFloor : (side == 2 ? 1.0 - kProbFloor : raw);
        acc -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
    }
    const double n = static_cast<double>(p.size());
    return make_op_result(
        {1}, {static_cast<float>(acc / n)}, {probs, target},
        [n](const TensorImpl& o, std::span<const ImplPtr> in) {
            if (!in[0]->requires_grad) return;
            auto g = in[0]->grad_buffer();
            const auto& pv = in[0]->data;
            const auto& tv = in[1]->data;
            const double upstream = o.grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double pi = pv[i];
                if (pi <= kProbFloor || pi >= 1.0 - kProbFloor) continue;
                g[i] += static_cast<float>(upstream * (-(tv[i] / pi) + (1.0 - tv[i]) / (1.0 - pi)) / n);
            }
        },
        "bce_loss");
}

Tensor combined_loss(const Tensor& probs, const Tensor& target) {
    return add(dice_loss(probs, target), bce_loss(probs, target));
}

SegMetrics segmentation_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) {
        throw DimensionError("metrics: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                             std::to_string(target.size()) + ")");
    }
    if (pred.empty()) throw DimensionError("metrics: empty masks");
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || target[i] > 1) throw ContractError("metrics: masks must be binary");
        if (pred[i] && target[i]) ++tp;
        else if (pred[i]) ++fp;
        else if (target[i]) ++fn;
        else ++tn;
    }
    SegMetrics m;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(pred.size());
    if (tp + fp + fn == 0) {
        m.dice = 1.0;
        m.jaccard = 1.0;
    } else {
        m.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        m.jaccard = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    }
    return m;
}

BinaryMask threshold_mask(std::span<const float> probs, float threshold) {
    BinaryMask out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > threshold ? 1 : 0;
    return out;
}

}  // namespace lgs
