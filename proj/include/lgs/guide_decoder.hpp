#pragma once

#include <vector>

#include "lgs/encoders.hpp"
#include "lgs/nn.hpp"

namespace lgs {

struct GuideDecoderConfig {
    std::int64_t visual_dim = 0;  // channels of the incoming visual tokens
    std::int64_t skip_dim = 0;    // channels of the skip feature, also the output width
    std::int64_t grid = 0;        // incoming token grid side; skip side is 2 * grid
    std::int64_t text_dim = 32;
    std::int64_t text_len = 24;   // tokens per prompt before reduction
    std::int64_t reduced_tokens = 4;
    std::int64_t heads = 4;
};

/// Every learnable of one text-guided decoding stage.
struct GuideDecoderParams {
    GuideDecoderConfig config;
    Tensor text_proj;         // [text_dim x visual_dim], applied per token, no bias
    ConvParams token_reduce;  // 1x1 across the token axis: text_len -> reduced_tokens
    MhaParams self_attn;
    NormParams self_norm;
    MhaParams cross_attn;
    NormParams cross_norm;
    Tensor alpha;             // scalar gate on the text pathway, starts at 0
    ConvParams merge;         // 3x3, (visual_dim + skip_dim) -> skip_dim
    PosEnc2D posenc;

    static GuideDecoderParams init(const GuideDecoderConfig& config, Rng& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Text-free stage with the same interface: upsample, concat skip, conv.
struct PlainDecoderParams {
    GuideDecoderConfig config;
    ConvParams merge;

    static PlainDecoderParams init(const GuideDecoderConfig& config, Rng& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

struct StageInput {
    Tensor visual;                // [(H*W) x visual_dim]
    Tensor text;                  // [text_len x text_dim]
    std::vector<bool> text_mask;  // true on real tokens
    Tensor skip;                  // [skip_dim x 2H x 2W]
};

/// Zeroes padded rows, projects each token to the visual width, mixes the
/// token axis down to `reduced_tokens` rows with a 1x1 conv, then ReLU.
Tensor project_text(const Tensor& text, const std::vector<bool>& mask, const GuideDecoderParams& p);

/// Adds the position table, then a residual layer-normed self-attention.
/// The residual carries the position-encoded tokens.
Tensor evolve_visual(const Tensor& visual, const GuideDecoderParams& p);

/// f_i + alpha * LN(cross-attention(f_i -> f_t)).
Tensor cross_fuse(const Tensor& evolved, const Tensor& projected_text, const GuideDecoderParams& p);

/// Tokens back to a [C x H x W] map, nearest 2x upsample, concat with the
/// skip on channels (tokens first), 3x3 conv, ReLU.
Tensor decode_merge(const Tensor& tokens, const Tensor& skip, const ConvParams& merge);

Tensor guide_decoder_forward(const StageInput& io, const GuideDecoderParams& p);
Tensor plain_decoder_forward(const Tensor& visual, const Tensor& skip, const PlainDecoderParams& p);

/// [C x H x W] feature map -> [(H*W) x C] tokens.
Tensor map_to_tokens(const Tensor& map);

}  // namespace lgs
