#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lgs/tensor.hpp"

namespace lgs {

/// Row-major C = alpha * op(A) * op(B) + beta * C, op = optional transpose.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, const float* b, float beta, float* c);

// Linear algebra and shape manipulation.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D only
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t length);
/// Row gather: out[i] = table[ids[i]].
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
/// x * s for a single-element tensor s; differentiable in both.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
/// x[N x C] + b[C] broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& b);
/// ReLU; the subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);

/// Branch log for piecewise ops (relu, probability clamps) on this thread.
/// While recording, each element's branch is appended; while replaying, the
/// ops take the recorded branch instead of their natural one, so a perturbed
/// evaluation stays on the smooth piece of the recorded point. Not nestable.
class BranchTrace {
public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    void record();
    void replay();
    std::size_t size() const { return log_.size(); }
    /// True when the last replay consumed exactly the recorded log.
    bool replay_complete() const { return replaying_ && cursor_ == log_.size(); }

    /// Branch an op should take, given the one its input selects. Identity
    /// when no trace is alive.
    static std::uint8_t branch(std::uint8_t natural);
    static bool active();

private:
    std::vector<std::uint8_t> log_;
    std::size_t cursor_ = 0;
    bool replaying_ = false;
};
Tensor sigmoid(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Max-stabilized softmax along `axis`.
Tensor softmax(const Tensor& x, std::int64_t axis);
/// Softmax over the last axis of a 2-D tensor; columns with key_mask false get
/// exactly zero weight. Every row must keep at least one unmasked column.
Tensor masked_softmax(const Tensor& x, const std::vector<bool>& key_mask);

/// Normalizes over the last dimension, then applies gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// x: [Cin x H x W], w: [Cout x Cin x kh x kw], bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride, std::int64_t pad);

/// [C x H x W] -> [C x 2H x 2W] by pixel replication.
Tensor upsample_nearest2x(const Tensor& x);

/// [C*r*r x H x W] -> [C x rH x rW]; channel c*r*r + i*r + j fills offset
/// (i, j) of every r x r output block.
Tensor pixel_shuffle(const Tensor& x, std::int64_t r);

}  // namespace lgs
