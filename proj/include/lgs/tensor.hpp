#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lgs {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

/// Backward rule of a recorded operation. Reads `out.grad` and accumulates
/// into the gradients of `inputs` that require them.
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const ImplPtr> inputs)>;

struct Node {
    const char* name = "";
    std::vector<ImplPtr> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;

    /// Gradient buffer, zero-allocated on first use.
    std::span<float> grad_buffer();
};

/// Handle to a shared N-d float32 array. Copies alias the same storage;
/// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::int64_t numel() const;

    std::span<const float> data() const;
    /// Mutable view; only meaningful for leaves (parameters, inputs).
    std::span<float> mutable_data();
    float item() const;
    float at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    bool is_leaf() const;
    Tensor detach() const;
    Tensor clone() const;

    const ImplPtr& impl() const { return impl_; }

private:
    ImplPtr impl_;
};

/// Build the output of a differentiable operation. A graph node is recorded
/// only when gradient recording is enabled and some input requires grad.
Tensor make_op_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                      BackwardFn backward, const char* name);
Tensor make_op_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                      BackwardFn backward, const char* name);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Topologically ordered list of graph nodes reachable from a root: every
/// node's inputs precede it.
class Tape {
public:
    static Tape record(const Tensor& root);

    std::span<TensorImpl* const> entries() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<TensorImpl*> order_;
};

/// Reverse-mode sweep from a scalar loss. Gradients of requires_grad leaves
/// accumulate additively across calls; intermediate gradients are released.
void backward(const Tensor& loss);

}  // namespace lgs
