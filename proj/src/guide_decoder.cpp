#include "lgs/guide_decoder.hpp"

#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

namespace {

void validate(const GuideDecoderConfig& c) {
    if (c.visual_dim < 1 || c.skip_dim < 1 || c.grid < 1) throw ConfigError("decoder: dimensions must be positive");
    if (c.reduced_tokens < 1 || c.reduced_tokens >= c.text_len) {
        throw ConfigError("decoder: reduced token count must be in [1, text_len)");
    }
}

std::int64_t token_grid_side(const Tensor& tokens) {
    const auto n = tokens.dim(0);
    auto side = static_cast<std::int64_t>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw DimensionError("decoder: " + std::to_string(n) + " tokens do not form a square grid");
    return side;
}

}  // namespace

GuideDecoderParams GuideDecoderParams::init(const GuideDecoderConfig& config, Rng& rng) {
    validate(config);
    GuideDecoderParams p;
    p.config = config;
    p.text_proj = uniform_param({config.text_dim, config.visual_dim}, config.text_dim, rng);
    p.token_reduce = ConvParams::init(config.text_len, config.reduced_tokens, 1, rng);
    p.self_attn = MhaParams::init(config.visual_dim, config.heads, rng);
    p.self_norm = NormParams::init(config.visual_dim);
    p.cross_attn = MhaParams::init(config.visual_dim, config.heads, rng);
    p.cross_norm = NormParams::init(config.visual_dim);
    p.alpha = Tensor::scalar(0.0f, true);
    p.merge = ConvParams::init(config.visual_dim + config.skip_dim, config.skip_dim, 3, rng);
    p.posenc = posenc2d(config.grid, config.grid, config.visual_dim);
    return p;
}

void GuideDecoderParams::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".text_proj", text_proj});
    token_reduce.collect(out, prefix + ".token_reduce");
    self_attn.collect(out, prefix + ".self_attn");
    self_norm.collect(out, prefix + ".self_norm");
    cross_attn.collect(out, prefix + ".cross_attn");
    cross_norm.collect(out, prefix + ".cross_norm");
    out.push_back({prefix + ".alpha", alpha});
    merge.collect(out, prefix + ".merge");
}

PlainDecoderParams PlainDecoderParams::init(const GuideDecoderConfig& config, Rng& rng) {
    if (config.visual_dim < 1 || config.skip_dim < 1) throw ConfigError("decoder: dimensions must be positive");
    return {config, ConvParams::init(config.visual_dim + config.skip_dim, config.skip_dim, 3, rng)};
}

void PlainDecoderParams::collect(ParamList& out, const std::string& prefix) const { merge.collect(out, prefix + ".merge"); }

Tensor map_to_tokens(const Tensor& map) {
    if (map.rank() != 3) throw DimensionError("map_to_tokens: expected [C x H x W], got " + shape_str(map.shape()));
    return transpose(reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

Tensor project_text(const Tensor& text, const std::vector<bool>& mask, const GuideDecoderParams& p) {
    const auto& c = p.config;
    if (text.rank() != 2 || text.dim(0) != c.text_len || text.dim(1) != c.text_dim) {
        throw DimensionError("project_text: text " + shape_str(text.shape()) + " does not match [" +
                             std::to_string(c.text_len) + "x" + std::to_string(c.text_dim) + "]");
    }
    if (static_cast<std::int64_t>(mask.size()) != c.text_len) throw DimensionError("project_text: mask length mismatch");
    std::vector<float> keep(static_cast<std::size_t>(text.numel()));
    for (std::int64_t t = 0; t < c.text_len; ++t) {
        std::fill_n(keep.begin() + t * c.text_dim, c.text_dim, mask[static_cast<std::size_t>(t)] ? 1.0f : 0.0f);
    }
    Tensor masked = mul(text, Tensor::from_data(text.shape(), std::move(keep)));
    Tensor per_token = matmul(masked, p.text_proj);  // [L x C]
    // Tokens act as input channels of a 1 x C "image".
    Tensor as_map = reshape(per_token, {c.text_len, 1, c.visual_dim});
    Tensor reduced = conv2d(as_map, p.token_reduce.weight, p.token_reduce.bias, 1, 0);
    return relu(reshape(reduced, {c.reduced_tokens, c.visual_dim}));
}

Tensor evolve_visual(const Tensor& visual, const GuideDecoderParams& p) {
    if (visual.rank() != 2 || visual.shape() != p.posenc.table.shape()) {
        throw DimensionError("evolve_visual: tokens " + shape_str(visual.shape()) + " do not match position table " +
                             shape_str(p.posenc.table.shape()));
    }
    Tensor encoded = add(visual, p.posenc.table);
    return add(encoded, layer_norm(mhsa(encoded, p.self_attn), p.self_norm));
}

Tensor cross_fuse(const Tensor& evolved, const Tensor& projected_text, const GuideDecoderParams& p) {
    if (evolved.rank() != 2 || projected_text.rank() != 2 || evolved.dim(1) != projected_text.dim(1)) {
        throw DimensionError("cross_fuse: " + shape_str(evolved.shape()) + " vs " + shape_str(projected_text.shape()));
    }
    Tensor update = layer_norm(mhca(evolved, projected_text, p.cross_attn), p.cross_norm);
    return add(evolved, mul_scalar(update, p.alpha));
}

Tensor decode_merge(const Tensor& tokens, const Tensor& skip, const ConvParams& merge) {
    if (tokens.rank() != 2) throw DimensionError("decode_merge: tokens must be 2-D, got " + shape_str(tokens.shape()));
    const auto side = token_grid_side(tokens);
    const auto channels = tokens.dim(1);
    if (skip.rank() != 3 || skip.dim(1) != 2 * side || skip.dim(2) != 2 * side) {
        throw DimensionError("decode_merge: skip " + shape_str(skip.shape()) + " must have side " +
                             std::to_string(2 * side));
    }
    Tensor map = reshape(transpose(tokens), {channels, side, side});
    Tensor merged = concat({upsample_nearest2x(map), skip}, 0);
    return relu(conv2d(merged, merge.weight, merge.bias, 1, 1));
}

Tensor guide_decoder_forward(const StageInput& io, const GuideDecoderParams& p) {
    Tensor text = project_text(io.text, io.text_mask, p);
    Tensor evolved = evolve_visual(io.visual, p);
    Tensor fused = cross_fuse(evolved, text, p);
    return decode_merge(fused, io.skip, p.merge);
}

Tensor plain_decoder_forward(const Tensor& visual, const Tensor& skip, const PlainDecoderParams& p) {
    return decode_merge(visual, skip, p.merge);
}

}  // namespace lgs
