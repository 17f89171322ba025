#include "lgs/nn.hpp"

#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

Tensor uniform_param(Shape shape, std::int64_t fan_in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

LinearParams LinearParams::init(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) {
    LinearParams p;
    p.weight = uniform_param({in, out}, in, rng);
    if (with_bias) p.bias = uniform_param({out}, in, rng);
    return p;
}

void LinearParams::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Tensor linear(const Tensor& x, const LinearParams& p) {
    if (x.rank() != 2 || x.dim(1) != p.in_features()) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(p.weight.shape()));
    }
    Tensor y = matmul(x, p.weight);
    return p.bias.defined() ? add_rowvec(y, p.bias) : y;
}

NormParams NormParams::init(std::int64_t channels) {
    return {Tensor::full({channels}, 1.0f, true), Tensor::zeros({channels}, true)};
}

void NormParams::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Tensor layer_norm(const Tensor& x, const NormParams& p) { return layer_norm(x, p.gamma, p.beta, 1e-5f); }

MhaParams MhaParams::init(std::int64_t model_dim, std::int64_t heads, Rng& rng) {
    if (heads < 1 || model_dim % heads != 0) {
        throw ConfigError("attention: model dimension " + std::to_string(model_dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    MhaParams p;
    p.heads = heads;
    p.head_dim = model_dim / heads;
    p.query = LinearParams::init(model_dim, model_dim, rng);
    p.key = LinearParams::init(model_dim, model_dim, rng, false);
    p.value = LinearParams::init(model_dim, model_dim, rng);
    p.output = LinearParams::init(model_dim, model_dim, rng);
    return p;
}

void MhaParams::collect(ParamList& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    output.collect(out, prefix + ".output");
}

AttentionResult attention(const Tensor& q_in, const Tensor& kv_in, const MhaParams& p, const KeyMask& kv_mask) {
    const auto c = p.model_dim();
    if (q_in.rank() != 2 || kv_in.rank() != 2 || q_in.dim(1) != c || kv_in.dim(1) != c) {
        throw DimensionError("attention: inputs " + shape_str(q_in.shape()) + " and " + shape_str(kv_in.shape()) +
                             " do not match model dimension " + std::to_string(c));
    }
    if (kv_mask && static_cast<std::int64_t>(kv_mask->size()) != kv_in.dim(0)) {
        throw DimensionError("attention: mask length " + std::to_string(kv_mask->size()) + " for " +
                             std::to_string(kv_in.dim(0)) + " keys");
    }
    Tensor q = linear(q_in, p.query);
    Tensor k = linear(kv_in, p.key);
    Tensor v = linear(kv_in, p.value);
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(p.head_dim));

    AttentionResult result;
    std::vector<Tensor> heads;
    for (std::int64_t h = 0; h < p.heads; ++h) {
        Tensor qh = slice(q, 1, h * p.head_dim, p.head_dim);
        Tensor kh = slice(k, 1, h * p.head_dim, p.head_dim);
        Tensor vh = slice(v, 1, h * p.head_dim, p.head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        Tensor w = kv_mask ? masked_softmax(scores, *kv_mask) : softmax(scores, 1);
        heads.push_back(matmul(w, vh));
        result.weights.push_back(w);
    }
    Tensor merged = heads.size() == 1 ? heads.front() : concat(heads, 1);
    result.out = linear(merged, p.output);
    return result;
}

Tensor mhsa(const Tensor& x, const MhaParams& p, const KeyMask& mask) { return attention(x, x, p, mask).out; }

Tensor mhca(const Tensor& q, const Tensor& kv, const MhaParams& p, const KeyMask& kv_mask) {
    return attention(q, kv, p, kv_mask).out;
}

PosEnc2D posenc2d(std::int64_t height, std::int64_t width, std::int64_t channels) {
    if (channels < 4 || channels % 4 != 0) {
        throw ConfigError("posenc2d: channels must be a positive multiple of 4, got " + std::to_string(channels));
    }
    if (height < 1 || width < 1) throw ConfigError("posenc2d: grid must be non-empty");
    const std::int64_t quarter = channels / 4;
    std::vector<float> table(static_cast<std::size_t>(height * width * channels));
    for (std::int64_t r = 0; r < height; ++r) {
        for (std::int64_t c = 0; c < width; ++c) {
            float* row = table.data() + (r * width + c) * channels;
            for (std::int64_t i = 0; i < quarter; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
                row[2 * i] = static_cast<float>(std::sin(static_cast<double>(r) * freq));
                row[2 * i + 1] = static_cast<float>(std::cos(static_cast<double>(r) * freq));
                row[2 * quarter + 2 * i] = static_cast<float>(std::sin(static_cast<double>(c) * freq));
                row[2 * quarter + 2 * i + 1] = static_cast<float>(std::cos(static_cast<double>(c) * freq));
            }
        }
    }
    return {height, width, channels, Tensor::from_data({height * width, channels}, std::move(table))};
}

Tensor posenc1d(std::int64_t length, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("posenc1d: dimension must be even");
    const std::int64_t half = dim / 2;
    std::vector<float> table(static_cast<std::size_t>(length * dim));
    for (std::int64_t pos = 0; pos < length; ++pos) {
        for (std::int64_t i = 0; i < half; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            table[static_cast<std::size_t>(pos * dim + 2 * i)] = static_cast<float>(std::sin(pos * freq));
            table[static_cast<std::size_t>(pos * dim + 2 * i + 1)] = static_cast<float>(std::cos(pos * freq));
        }
    }
    return Tensor::from_data({length, dim}, std::move(table));
}

}  // namespace lgs
