#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lgs/gradcheck.hpp"
#include "lgs/rng.hpp"
#include "lgs/tensor.hpp"

namespace lgs {

using ParamList = std::vector<NamedTensor>;
using KeyMask = std::optional<std::vector<bool>>;

/// Trainable tensor drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_param(Shape shape, std::int64_t fan_in, Rng& rng);

struct LinearParams {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out], undefined for a bias-free projection

    static LinearParams init(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias = true);
    std::int64_t in_features() const { return weight.dim(0); }
    std::int64_t out_features() const { return weight.dim(1); }
    void collect(ParamList& out, const std::string& prefix) const;
};

Tensor linear(const Tensor& x, const LinearParams& p);

struct NormParams {
    Tensor gamma;
    Tensor beta;

    static NormParams init(std::int64_t channels);
    void collect(ParamList& out, const std::string& prefix) const;
};

Tensor layer_norm(const Tensor& x, const NormParams& p);

struct MhaParams {
    std::int64_t heads = 0;
    std::int64_t head_dim = 0;
    // key has no bias: it would add the same score to every key of a query
    LinearParams query, key, value, output;

    static MhaParams init(std::int64_t model_dim, std::int64_t heads, Rng& rng);
    std::int64_t model_dim() const { return heads * head_dim; }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct AttentionResult {
    Tensor out;
    /// One [queries x keys] row-stochastic matrix per head.
    std::vector<Tensor> weights;
};

/// Multi-head scaled dot-product attention: queries from `q_in`, keys and
/// values from `kv_in`. Masked keys receive exactly zero weight.
AttentionResult attention(const Tensor& q_in, const Tensor& kv_in, const MhaParams& p, const KeyMask& kv_mask);

Tensor mhsa(const Tensor& x, const MhaParams& p, const KeyMask& mask = std::nullopt);
Tensor mhca(const Tensor& q, const Tensor& kv, const MhaParams& p, const KeyMask& kv_mask = std::nullopt);

/// Fixed 2-D sinusoidal position table, one row per grid cell in row-major
/// order. The first C/2 channels encode the row index, the rest the column,
/// each as interleaved (sin, cos) pairs at geometric frequencies.
struct PosEnc2D {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;
    Tensor table;  // [(H*W) x C], no gradient
};

PosEnc2D posenc2d(std::int64_t height, std::int64_t width, std::int64_t channels);

/// 1-D sinusoidal table [length x dim]; dim must be even.
Tensor posenc1d(std::int64_t length, std::int64_t dim);

}  // namespace lgs
