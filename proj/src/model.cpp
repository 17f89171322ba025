#include "lgs/model.hpp"

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

std::string to_string(PromptMode mode) {
    switch (mode) {
        case PromptMode::None: return "none";
        case PromptMode::S12: return "s12";
        case PromptMode::S3: return "s3";
        case PromptMode::S123: return "s123";
    }
    return "none";
}

PromptMode parse_prompt_mode(const std::string& text) {
    if (text == "none") return PromptMode::None;
    if (text == "s12") return PromptMode::S12;
    if (text == "s3") return PromptMode::S3;
    if (text == "s123") return PromptMode::S123;
    throw ConfigError("unknown prompt mode '" + text + "' (expected none, s12, s3 or s123)");
}

std::string assemble_prompt(const PromptStages& stages, PromptMode mode) {
    auto need = [](const std::string& s, const char* which) -> const std::string& {
        if (s.empty()) throw InputError(std::string("prompt is missing ") + which);
        return s;
    };
    switch (mode) {
        case PromptMode::None: return {};
        case PromptMode::S12: return need(stages.stage1, "stage1") + ", " + need(stages.stage2, "stage2");
        case PromptMode::S3: return need(stages.stage3, "stage3");
        case PromptMode::S123:
            return need(stages.stage1, "stage1") + ", " + need(stages.stage2, "stage2") + ", " +
                   need(stages.stage3, "stage3");
    }
    return {};
}

void ModelConfig::validate() const {
    if (guide_decoders < 0 || guide_decoders > 3) {
        throw ConfigError("decoder count must be in 0..3, got " + std::to_string(guide_decoders));
    }
    const auto stride = image.stem_stride;
    if (stride < 1 || (stride & (stride - 1)) != 0) throw ConfigError("stem stride must be a power of two");
    if (image_side < 1 || image_side % image.total_stride() != 0) {
        throw ConfigError("image side " + std::to_string(image_side) + " must be divisible by " +
                          std::to_string(image.total_stride()));
    }
}

SegModel SegModel::init(const ModelConfig& config, const Vocab& vocab, Rng& rng) {
    config.validate();
    SegModel m;
    m.config_ = config;
    m.vocab_ = vocab;
    m.image_encoder_ = ImageEncoder::init(config.image, rng);
    TextEncoderConfig tc;
    tc.vocab_size = vocab.size();
    tc.dim = config.text_dim;
    tc.heads = config.text_heads;
    tc.blocks = config.text_blocks;
    tc.ffn_dim = config.text_ffn;
    m.text_encoder_ = TextEncoder::init(tc, rng);

    const auto& w = config.image.widths;
    const int guides = config.effective_guides();
    for (std::size_t s = 0; s < 3; ++s) {
        GuideDecoderConfig dc;
        dc.visual_dim = w[3 - s];
        dc.skip_dim = w[2 - s];
        dc.grid = config.image_side / (config.image.total_stride() >> s);
        dc.text_dim = config.text_dim;
        dc.text_len = config.text_len;
        dc.reduced_tokens = config.reduced_tokens;
        dc.heads = config.heads;
        if (static_cast<int>(s) < guides) m.stages_[s] = GuideDecoderParams::init(dc, rng);
        else m.stages_[s] = PlainDecoderParams::init(dc, rng);
    }
    const auto r = config.image.stem_stride;
    m.head_ = ConvParams::init(w[0], r * r, 3, rng);
    return m;
}

Tensor SegModel::forward(const Tensor& image, const PromptStages& prompt) const {
    if (image.rank() != 3 || image.dim(1) != config_.image_side || image.dim(2) != config_.image_side) {
        throw DimensionError("model: expected image [1 x " + std::to_string(config_.image_side) + " x " +
                             std::to_string(config_.image_side) + "], got " + shape_str(image.shape()));
    }
    const FeaturePyramid features = image_encoder_.encode(image);

    Tensor text;
    std::vector<bool> text_mask;
    if (config_.effective_guides() > 0) {
        const TokenizedPrompt tokens =
            tokenize(assemble_prompt(prompt, config_.prompt_mode), vocab_, config_.text_len);
        text = text_encoder_.encode(tokens);
        text_mask = tokens.mask;
    }

    Tensor visual = map_to_tokens(features.levels[3]);
    Tensor decoded;
    for (std::size_t s = 0; s < 3; ++s) {
        const Tensor& skip = features.levels[2 - s];
        if (const auto* guide = std::get_if<GuideDecoderParams>(&stages_[s])) {
            decoded = guide_decoder_forward({visual, text, text_mask, skip}, *guide);
        } else {
            decoded = plain_decoder_forward(visual, skip, std::get<PlainDecoderParams>(stages_[s]));
        }
        if (s < 2) visual = map_to_tokens(decoded);
    }
    // one logit per pixel of each stem-sized block, so edges inside a block
    // stay learnable; the 3x3 window lets a block see its neighbours
    Tensor logits = conv2d(decoded, head_.weight, head_.bias, 1, 1);
    return pixel_shuffle(logits, config_.image.stem_stride);
}

Prediction SegModel::predict(const Tensor& image, const PromptStages& prompt) const {
    NoGradGuard no_grad;
    Prediction p;
    p.logits = forward(image, prompt);
    p.probabilities = sigmoid(p.logits);
    p.mask = threshold_mask(p.probabilities.data());
    return p;
}

ParamList SegModel::parameters() const {
    ParamList out;
    image_encoder_.collect(out, "image_encoder");
    text_encoder_.collect(out, "text_encoder");
    for (std::size_t s = 0; s < 3; ++s) {
        const std::string prefix = "decoder" + std::to_string(s);
        std::visit([&](const auto& stage) { stage.collect(out, prefix); }, stages_[s]);
    }
    head_.collect(out, "head");
    return out;
}

GuideDecoderParams& SegModel::guide_stage(std::size_t i) {
    if (i >= stages_.size() || !std::holds_alternative<GuideDecoderParams>(stages_[i])) {
        throw ContractError("stage " + std::to_string(i) + " is not a guide decoder");
    }
    return std::get<GuideDecoderParams>(stages_[i]);
}

}  // namespace lgs
