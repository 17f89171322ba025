#include "lgs/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "lgs/errors.hpp"

namespace lgs {

namespace {

thread_local bool g_grad_enabled = true;

ImplPtr new_impl(Shape shape, std::vector<float> data, bool requires_grad) {
    for (auto d : shape) {
        if (d < 1) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(shape));
    }
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return impl;
}

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<float> data, const Range& inputs, BackwardFn backward,
                        const char* name) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
    }
    auto impl = new_impl(std::move(shape), std::move(data), needs);
    if (needs) {
        auto node = std::make_shared<Node>();
        node->name = name;
        node->inputs.reserve(inputs.size());
        for (const auto& t : inputs) node->inputs.push_back(t.impl());
        node->backward = std::move(backward);
        impl->grad_fn = std::move(node);
    }
    return Tensor(std::move(impl));
}

}  // namespace

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::span<float> TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    auto n = lgs::numel(shape);
    if (n < 1) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(shape));
    return Tensor(new_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    return Tensor(new_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
    if (impl_->data.size() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw IndexError("index rank does not match " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[axis]) throw IndexError("index out of range for " + shape_str(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }
std::span<float> Tensor::mutable_grad() { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }
bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

Tensor Tensor::detach() const { return Tensor(new_impl(impl_->shape, impl_->data, false)); }

Tensor Tensor::clone() const {
    auto impl = new_impl(impl_->shape, impl_->data, impl_->requires_grad);
    impl->grad = impl_->grad;
    return Tensor(std::move(impl));
}

Tensor make_op_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                      BackwardFn backward, const char* name) {
    return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward), name);
}

Tensor make_op_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                      BackwardFn backward, const char* name) {
    return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward), name);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape Tape::record(const Tensor& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<TensorImpl*> visited;
    // Iterative post-order DFS; (impl, next child index).
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    visited.insert(root.impl().get());
    while (!stack.empty()) {
        auto& [impl, child] = stack.back();
        const std::size_t n_inputs = impl->grad_fn ? impl->grad_fn->inputs.size() : 0;
        if (child < n_inputs) {
            TensorImpl* next = impl->grad_fn->inputs[child].get();
            ++child;
            if (next->requires_grad && visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            tape.order_.push_back(impl);
            stack.pop_back();
        }
    }
    return tape;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw ContractError("backward(): loss is not connected to any parameter");
    Tape tape = Tape::record(loss);
    loss.impl()->grad_buffer()[0] += 1.0f;
    auto entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        TensorImpl* impl = *it;
        if (!impl->grad_fn) continue;
        if (!impl->grad.empty()) impl->grad_fn->backward(*impl, impl->grad_fn->inputs);
        // Interior gradients are not needed after propagation.
        impl->grad.clear();
        impl->grad.shrink_to_fit();
    }
}

}  // namespace lgs
