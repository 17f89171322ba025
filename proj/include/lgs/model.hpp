#pragma once

#include <array>
#include <string>
#include <variant>

#include "lgs/encoders.hpp"
#include "lgs/guide_decoder.hpp"
#include "lgs/loss.hpp"

namespace lgs {

/// Which prompt stages reach the text encoder; None disables text entirely.
enum class PromptMode { None, S12, S3, S123 };

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& text);  // throws ConfigError

struct PromptStages {
    std::string stage1;
    std::string stage2;
    std::string stage3;
};

/// Comma-joined selection of stages for `mode`. Throws InputError when a
/// selected stage is empty.
std::string assemble_prompt(const PromptStages& stages, PromptMode mode);

struct ModelConfig {
    ImageEncoderConfig image;
    std::int64_t image_side = 64;
    std::int64_t text_dim = 32;
    std::int64_t text_blocks = 2;
    std::int64_t text_ffn = 64;
    std::int64_t text_len = 24;
    std::int64_t reduced_tokens = 4;
    std::int64_t heads = 4;
    std::int64_t text_heads = 4;
    /// Number of guide stages, filled deepest first; the rest are plain.
    int guide_decoders = 3;
    PromptMode prompt_mode = PromptMode::S123;

    /// Guide stages actually built: 0 when prompt_mode is None.
    int effective_guides() const { return prompt_mode == PromptMode::None ? 0 : guide_decoders; }
    void validate() const;
};

struct Prediction {
    Tensor logits;         // [1 x S x S]
    Tensor probabilities;  // sigmoid(logits)
    BinaryMask mask;       // probabilities > 0.5
};

/// Image encoder, text encoder, three decoder slots (deepest first) and a
/// 1x1 segmentation head.
class SegModel {
public:
    using Stage = std::variant<GuideDecoderParams, PlainDecoderParams>;

    static SegModel init(const ModelConfig& config, const Vocab& vocab, Rng& rng);

    /// Differentiable logits [1 x S x S] for image [1 x S x S].
    Tensor forward(const Tensor& image, const PromptStages& prompt) const;
    Prediction predict(const Tensor& image, const PromptStages& prompt) const;

    /// Every learnable with a stable hierarchical name.
    ParamList parameters() const;

    const ModelConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }
    const std::array<Stage, 3>& stages() const { return stages_; }
    /// Guide stage i (deepest first); throws ContractError if plain.
    GuideDecoderParams& guide_stage(std::size_t i);

private:
    ModelConfig config_;
    Vocab vocab_;
    ImageEncoder image_encoder_;
    TextEncoder text_encoder_;
    std::array<Stage, 3> stages_;
    ConvParams head_;
};

}  // namespace lgs
