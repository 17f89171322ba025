#include "lgs/ops.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <limits>
#include <memory>

#include "lgs/errors.hpp"

namespace lgs {

namespace {

std::size_t sz(std::int64_t v) { return static_cast<std::size_t>(v); }

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// Accumulate `src` into the gradient of input i if it participates.
template <typename F>
void with_grad(const ImplPtr& in, F&& f) {
    if (in->requires_grad) f(in->grad_buffer());
}

void im2col(const float* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, float* cols) {
    const std::int64_t p = ho * wo;
    for (std::int64_t c = 0; c < cin; ++c) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                float* row = cols + ((c * kh + ky) * kw + kx) * p;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    float* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0f);
                        continue;
                    }
                    const float* src = x + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, float* dx) {
    const std::int64_t p = ho * wo;
    for (std::int64_t c = 0; c < cin; ++c) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const float* row = cols + ((c * kh + ky) * kw + kx) * p;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = dx + (c * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
    std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i < axis) r.outer *= s[i];
        else if (i == axis) r.extent = s[i];
        else r.inner *= s[i];
    }
    return r;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha, const float* a,
          const float* b, float beta, float* c) {
    const auto lda = static_cast<blasint>(trans_a ? m : k);
    const auto ldb = static_cast<blasint>(trans_b ? k : n);
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), alpha, a, lda, b, ldb,
                beta, c, static_cast<blasint>(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<float> out(sz(m * n));
    gemm(false, false, m, n, k, 1.0f, a.data().data(), b.data().data(), 0.0f, out.data());
    return make_op_result(
        {m, n}, std::move(out), {a, b},
        [m, n, k](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> ga) {
                gemm(false, true, m, k, n, 1.0f, o.grad.data(), in[1]->data.data(), 1.0f, ga.data());
            });
            with_grad(in[1], [&](std::span<float> gb) {
                gemm(true, false, k, n, m, 1.0f, in[0]->data.data(), o.grad.data(), 1.0f, gb.data());
            });
        },
        "matmul");
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    const auto r = x.dim(0), c = x.dim(1);
    std::vector<float> out(sz(r * c));
    auto src = x.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[sz(j * r + i)] = src[sz(i * c + j)];
    return make_op_result(
        {c, r}, std::move(out), {x},
        [r, c](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) g[sz(i * c + j)] += o.grad[sz(j * r + i)];
            });
        },
        "transpose");
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<float> out(x.data().begin(), x.data().end());
    return make_op_result(
        std::move(shape), std::move(out), {x},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            });
        },
        "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw IndexError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    const auto split = split_axis(out_shape, axis);
    std::vector<float> out(sz(numel(out_shape)));
    std::vector<std::int64_t> offsets;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::int64_t block = p.shape()[axis] * split.inner;
        auto src = p.data();
        for (std::int64_t o = 0; o < split.outer; ++o) {
            std::copy_n(src.begin() + o * block, block, out.begin() + (o * split.extent + offset) * split.inner);
        }
        offset += p.shape()[axis];
    }
    return make_op_result(
        out_shape, std::move(out), parts,
        [split, offsets, axis](const TensorImpl& o, std::span<const ImplPtr> in) {
            for (std::size_t i = 0; i < in.size(); ++i) {
                with_grad(in[i], [&](std::span<float> g) {
                    const std::int64_t block = in[i]->shape[axis] * split.inner;
                    for (std::int64_t q = 0; q < split.outer; ++q) {
                        const float* src = o.grad.data() + (q * split.extent + offsets[i]) * split.inner;
                        float* dst = g.data() + q * block;
                        for (std::int64_t e = 0; e < block; ++e) dst[e] += src[e];
                    }
                });
            }
        },
        "concat");
}

Tensor slice(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw IndexError("slice: axis out of range for " + shape_str(s));
    if (start < 0 || length < 1 || start + length > s[axis]) {
        throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for " + shape_str(s));
    }
    const auto split = split_axis(s, axis);
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<float> out(sz(numel(out_shape)));
    auto src = x.data();
    const std::int64_t block = length * split.inner;
    for (std::int64_t o = 0; o < split.outer; ++o) {
        std::copy_n(src.begin() + (o * split.extent + start) * split.inner, block, out.begin() + o * block);
    }
    return make_op_result(
        out_shape, std::move(out), {x},
        [split, start, block](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t q = 0; q < split.outer; ++q) {
                    float* dst = g.data() + (q * split.extent + start) * split.inner;
                    const float* gs = o.grad.data() + q * block;
                    for (std::int64_t e = 0; e < block; ++e) dst[e] += gs[e];
                }
            });
        },
        "slice");
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids) {
    require_rank(table, 2, "embedding");
    const auto vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    std::vector<float> out(ids.size() * sz(d));
    auto src = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) throw IndexError("embedding: id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(src.begin() + ids[i] * d, d, out.begin() + static_cast<std::ptrdiff_t>(i) * d);
    }
    return make_op_result(
        {static_cast<std::int64_t>(ids.size()), d}, std::move(out), {table},
        [ids, d](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < ids.size(); ++i)
                    for (std::int64_t j = 0; j < d; ++j) g[sz(ids[i] * d + j)] += o.grad[i * sz(d) + sz(j)];
            });
        },
        "embedding");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<float> out(sz(a.numel()));
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            for (int k = 0; k < 2; ++k) {
                with_grad(in[sz(k)], [&](std::span<float> g) {
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                });
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<float> out(sz(a.numel()));
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            });
            with_grad(in[1], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
            });
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<float> out(sz(a.numel()));
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * in[1]->data[i];
            });
            with_grad(in[1], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * in[0]->data[i];
            });
        },
        "mul");
}

Tensor scale(const Tensor& x, float factor) {
    std::vector<float> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    return make_op_result(
        x.shape(), std::move(out), {x},
        [factor](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
            });
        },
        "scale");
}

Tensor add_scalar(const Tensor& x, float value) {
    std::vector<float> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += value;
    return make_op_result(
        x.shape(), std::move(out), {x},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            });
        },
        "add_scalar");
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw DimensionError("mul_scalar: factor must have one element, got " + shape_str(s.shape()));
    const float f = s.item();
    std::vector<float> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= f;
    return make_op_result(
        x.shape(), std::move(out), {x, s},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            const float f = in[1]->data[0];
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * f;
            });
            with_grad(in[1], [&](std::span<float> g) {
                double acc = 0.0;
                for (std::size_t i = 0; i < o.grad.size(); ++i) acc += static_cast<double>(o.grad[i]) * in[0]->data[i];
                g[0] += static_cast<float>(acc);
            });
        },
        "mul_scalar");
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    require_rank(x, 2, "add_rowvec");
    const auto n = x.dim(0), c = x.dim(1);
    if (b.numel() != c) {
        throw DimensionError("add_rowvec: bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
    }
    std::vector<float> out(x.data().begin(), x.data().end());
    auto bv = b.data();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[sz(i * c + j)] += bv[sz(j)];
    return make_op_result(
        x.shape(), std::move(out), {x, b},
        [n, c](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            });
            with_grad(in[1], [&](std::span<float> g) {
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < c; ++j) g[sz(j)] += o.grad[sz(i * c + j)];
            });
        },
        "add_rowvec");
}

namespace {
thread_local BranchTrace* g_trace = nullptr;
}  // namespace

BranchTrace::BranchTrace() {
    if (g_trace) throw ContractError("BranchTrace: already active on this thread");
    g_trace = this;
}

BranchTrace::~BranchTrace() { g_trace = nullptr; }

void BranchTrace::record() {
    log_.clear();
    replaying_ = false;
}

void BranchTrace::replay() {
    cursor_ = 0;
    replaying_ = true;
}

std::uint8_t BranchTrace::branch(std::uint8_t natural) {
    BranchTrace* t = g_trace;
    if (!t) return natural;
    if (!t->replaying_) {
        t->log_.push_back(natural);
        return natural;
    }
    if (t->cursor_ >= t->log_.size()) {
        // more piecewise elements than recorded; replay_complete() reports it
        t->cursor_ = t->log_.size() + 1;
        return natural;
    }
    return t->log_[t->cursor_++];
}

bool BranchTrace::active() { return g_trace != nullptr; }

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.data().begin(), x.data().end());
    if (BranchTrace::active()) {
        for (auto& v : out) v = BranchTrace::branch(v > 0.0f ? 1 : 0) ? v : 0.0f;
    } else {
        for (auto& v : out) v = v > 0.0f ? v : 0.0f;
    }
    return make_op_result(
        x.shape(), std::move(out), {x},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (in[0]->data[i] > 0.0f) g[i] += o.grad[i];
            });
        },
        "relu");
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.data().begin(), x.data().end());
    for (auto& v : out) {
        v = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
    }
    return make_op_result(
        x.shape(), std::move(out), {x},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i] * (1.0f - o.data[i]);
            });
        },
        "sigmoid");
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return make_op_result(
        {1}, {static_cast<float>(acc)}, {x},
        [](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (auto& v : g) v += o.grad[0];
            });
        },
        "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor softmax(const Tensor& x, std::int64_t axis) {
    const auto rank = static_cast<std::int64_t>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw IndexError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const auto split = split_axis(x.shape(), sz(axis));
    std::vector<float> out(sz(x.numel()));
    auto src = x.data();
    for (std::int64_t o = 0; o < split.outer; ++o) {
        for (std::int64_t i = 0; i < split.inner; ++i) {
            const std::int64_t base = o * split.extent * split.inner + i;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::int64_t e = 0; e < split.extent; ++e) mx = std::max(mx, src[sz(base + e * split.inner)]);
            double total = 0.0;
            for (std::int64_t e = 0; e < split.extent; ++e) {
                const float v = std::exp(src[sz(base + e * split.inner)] - mx);
                out[sz(base + e * split.inner)] = v;
                total += v;
            }
            const float inv = static_cast<float>(1.0 / total);
            for (std::int64_t e = 0; e < split.extent; ++e) out[sz(base + e * split.inner)] *= inv;
        }
    }
    return make_op_result(
        x.shape(), std::move(out), {x},
        [split](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t q = 0; q < split.outer; ++q) {
                    for (std::int64_t i = 0; i < split.inner; ++i) {
                        const std::int64_t base = q * split.extent * split.inner + i;
                        double dot = 0.0;
                        for (std::int64_t e = 0; e < split.extent; ++e) {
                            const auto idx = sz(base + e * split.inner);
                            dot += static_cast<double>(o.grad[idx]) * o.data[idx];
                        }
                        for (std::int64_t e = 0; e < split.extent; ++e) {
                            const auto idx = sz(base + e * split.inner);
                            g[idx] += o.data[idx] * (o.grad[idx] - static_cast<float>(dot));
                        }
                    }
                }
            });
        },
        "softmax");
}

Tensor masked_softmax(const Tensor& x, const std::vector<bool>& key_mask) {
    require_rank(x, 2, "masked_softmax");
    const auto rows = x.dim(0), cols = x.dim(1);
    if (static_cast<std::int64_t>(key_mask.size()) != cols) {
        throw DimensionError("masked_softmax: mask length " + std::to_string(key_mask.size()) + " vs " +
                             shape_str(x.shape()));
    }
    if (std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
        throw ContractError("masked_softmax: every key is masked");
    }
    std::vector<float> out(sz(x.numel()), 0.0f);
    auto src = x.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = src.data() + r * cols;
        float* dst = out.data() + r * cols;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::int64_t c = 0; c < cols; ++c)
            if (key_mask[sz(c)]) mx = std::max(mx, row[c]);
        double total = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            if (!key_mask[sz(c)]) continue;
            dst[c] = std::exp(row[c] - mx);
            total += dst[c];
        }
        const float inv = static_cast<float>(1.0 / total);
        for (std::int64_t c = 0; c < cols; ++c) dst[c] *= inv;
    }
    return make_op_result(
        x.shape(), std::move(out), {x},
        [rows, cols](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    const float* y = o.data.data() + r * cols;
                    const float* gy = o.grad.data() + r * cols;
                    double dot = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) dot += static_cast<double>(gy[c]) * y[c];
                    for (std::int64_t c = 0; c < cols; ++c)
                        g[sz(r * cols + c)] += y[c] * (gy[c] - static_cast<float>(dot));
                }
            });
        },
        "masked_softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
    if (!(eps > 0.0f)) throw ContractError("layer_norm: eps must be positive");
    const auto c = x.shape().back();
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " does not match last dimension of " + shape_str(x.shape()));
    }
    const auto rows = x.numel() / c;
    auto src = x.data();
    auto gv = gamma.data(), bv = beta.data();
    std::vector<float> out(sz(x.numel()));
    auto xhat = std::make_shared<std::vector<float>>(sz(x.numel()));
    auto rstd = std::make_shared<std::vector<float>>(sz(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = src.data() + r * c;
        double mu = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*rstd)[sz(r)] = static_cast<float>(rs);
        for (std::int64_t j = 0; j < c; ++j) {
            const auto idx = sz(r * c + j);
            const float h = static_cast<float>((row[j] - mu) * rs);
            (*xhat)[idx] = h;
            out[idx] = h * gv[sz(j)] + bv[sz(j)];
        }
    }
    return make_op_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xhat, rstd, rows, c](const TensorImpl& o, std::span<const ImplPtr> in) {
            const auto& gam = in[1]->data;
            with_grad(in[0], [&](std::span<float> g) {
                std::vector<double> dxh(sz(c));
                for (std::int64_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const auto idx = sz(r * c + j);
                        dxh[sz(j)] = static_cast<double>(o.grad[idx]) * gam[sz(j)];
                        mean_d += dxh[sz(j)];
                        mean_dx += dxh[sz(j)] * (*xhat)[idx];
                    }
                    mean_d /= static_cast<double>(c);
                    mean_dx /= static_cast<double>(c);
                    const double rs = (*rstd)[sz(r)];
                    for (std::int64_t j = 0; j < c; ++j) {
                        const auto idx = sz(r * c + j);
                        g[idx] += static_cast<float>(rs * (dxh[sz(j)] - mean_d - (*xhat)[idx] * mean_dx));
                    }
                }
            });
            with_grad(in[1], [&](std::span<float> g) {
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < c; ++j) g[sz(j)] += o.grad[sz(r * c + j)] * (*xhat)[sz(r * c + j)];
            });
            with_grad(in[2], [&](std::span<float> g) {
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < c; ++j) g[sz(j)] += o.grad[sz(r * c + j)];
            });
        },
        "layer_norm");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride, std::int64_t pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
    const auto cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) {
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)) +
                             " input channels, input is " + shape_str(x.shape()));
    }
    if (kh > h + 2 * pad || kw > wd + 2 * pad) {
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                             shape_str(x.shape()) + " (pad " + std::to_string(pad) + ")");
    }
    if (bias.defined() && bias.numel() != cout) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                             " output channels");
    }
    const auto ho = (h + 2 * pad - kh) / stride + 1;
    const auto wo = (wd + 2 * pad - kw) / stride + 1;
    const auto k = cin * kh * kw;
    const auto p = ho * wo;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    auto cols = std::make_shared<std::vector<float>>();
    if (!pointwise) {
        cols->resize(sz(k * p));
        im2col(x.data().data(), cin, h, wd, kh, kw, stride, pad, ho, wo, cols->data());
    }
    std::vector<float> out(sz(cout * p));
    if (bias.defined()) {
        auto bv = bias.data();
        for (std::int64_t o = 0; o < cout; ++o) std::fill_n(out.begin() + o * p, p, bv[sz(o)]);
    }
    const float* colp = pointwise ? x.data().data() : cols->data();
    gemm(false, false, cout, p, k, 1.0f, w.data().data(), colp, bias.defined() ? 1.0f : 0.0f, out.data());

    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_op_result(
        {cout, ho, wo}, std::move(out), inputs,
        [=](const TensorImpl& o, std::span<const ImplPtr> in) {
            const float* colp = pointwise ? in[0]->data.data() : cols->data();
            with_grad(in[1], [&](std::span<float> gw) {
                gemm(false, true, cout, k, p, 1.0f, o.grad.data(), colp, 1.0f, gw.data());
            });
            if (in.size() > 2) {
                with_grad(in[2], [&](std::span<float> gb) {
                    for (std::int64_t q = 0; q < cout; ++q) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < p; ++i) acc += o.grad[sz(q * p + i)];
                        gb[sz(q)] += static_cast<float>(acc);
                    }
                });
            }
            with_grad(in[0], [&](std::span<float> gx) {
                if (pointwise) {
                    gemm(true, false, k, p, cout, 1.0f, in[1]->data.data(), o.grad.data(), 1.0f, gx.data());
                    return;
                }
                std::vector<float> dcols(sz(k * p));
                gemm(true, false, k, p, cout, 1.0f, in[1]->data.data(), o.grad.data(), 0.0f, dcols.data());
                col2im(dcols.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, gx.data());
            });
        },
        "conv2d");
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 3, "upsample_nearest2x");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto h2 = 2 * h, w2 = 2 * w;
    std::vector<float> out(sz(c * h2 * w2));
    auto src = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h2; ++y)
            for (std::int64_t xx = 0; xx < w2; ++xx)
                out[sz((ch * h2 + y) * w2 + xx)] = src[sz((ch * h + y / 2) * w + xx / 2)];
    return make_op_result(
        {c, h2, w2}, std::move(out), {x},
        [c, h, w, h2, w2](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < h2; ++y)
                        for (std::int64_t xx = 0; xx < w2; ++xx)
                            g[sz((ch * h + y / 2) * w + xx / 2)] += o.grad[sz((ch * h2 + y) * w2 + xx)];
            });
        },
        "upsample_nearest2x");
}

Tensor pixel_shuffle(const Tensor& x, std::int64_t r) {
    require_rank(x, 3, "pixel_shuffle");
    if (r < 1 || x.dim(0) % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: " + std::to_string(x.dim(0)) + " channels for factor " + std::to_string(r));
    }
    const auto c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
    const auto hr = h * r, wr = w * r;
    // out index -> in index, shared by both directions
    auto src_of = [=](std::int64_t ch, std::int64_t y, std::int64_t xx) {
        return sz(((ch * r * r + (y % r) * r + xx % r) * h + y / r) * w + xx / r);
    };
    std::vector<float> out(sz(c * hr * wr));
    auto src = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < hr; ++y)
            for (std::int64_t xx = 0; xx < wr; ++xx) out[sz((ch * hr + y) * wr + xx)] = src[src_of(ch, y, xx)];
    return make_op_result(
        {c, hr, wr}, std::move(out), {x},
        [c, hr, wr, src_of](const TensorImpl& o, std::span<const ImplPtr> in) {
            with_grad(in[0], [&](std::span<float> g) {
                for (std::int64_t ch = 0; ch < c; ++ch)
                    for (std::int64_t y = 0; y < hr; ++y)
                        for (std::int64_t xx = 0; xx < wr; ++xx) g[src_of(ch, y, xx)] += o.grad[sz((ch * hr + y) * wr + xx)];
            });
        },
        "pixel_shuffle");
}

}  // namespace lgs
