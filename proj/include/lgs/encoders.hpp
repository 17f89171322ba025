#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "lgs/nn.hpp"

namespace lgs {

// ---------------------------------------------------------------------------
// Tokenization

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;
inline constexpr std::int64_t kClsId = 2;

class Vocab {
public:
    /// Specials first ([PAD], [UNK], [CLS]), then `words` in order.
    /// Throws ConfigError on duplicates.
    static Vocab build(const std::vector<std::string>& words);

    std::int64_t size() const { return static_cast<std::int64_t>(words_.size()); }
    std::int64_t id(const std::string& word) const;  // kUnkId when absent
    const std::string& word(std::int64_t id) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::int64_t> ids_;
};

struct TokenizedPrompt {
    std::vector<std::int64_t> ids;
    std::vector<bool> mask;  // true on real tokens

    std::int64_t length() const { return static_cast<std::int64_t>(ids.size()); }
};

/// Lowercases, splits on whitespace and commas, prepends [CLS], then
/// truncates or pads to `max_len`.
TokenizedPrompt tokenize(const std::string& prompt, const Vocab& vocab, std::int64_t max_len);

// ---------------------------------------------------------------------------
// Image encoder

struct ConvParams {
    Tensor weight;  // [Cout x Cin x k x k]
    Tensor bias;    // [Cout]

    static ConvParams init(std::int64_t cin, std::int64_t cout, std::int64_t kernel, Rng& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

/// Layer norm across channels at every pixel of a [C x H x W] map.
Tensor channel_norm(const Tensor& x, const NormParams& p);

struct ImageEncoderConfig {
    std::int64_t in_channels = 1;
    std::array<std::int64_t, 4> widths{16, 32, 64, 128};
    /// Downsampling of the stem; later stages halve resolution each.
    std::int64_t stem_stride = 4;

    std::int64_t total_stride() const { return stem_stride * 8; }
};

struct FeaturePyramid {
    /// Finest first: strides stem, 2*stem, 4*stem, 8*stem (4/8/16/32 by default).
    std::array<Tensor, 4> levels;
};

class ImageEncoder {
public:
    struct Block {
        ConvParams conv;
        NormParams norm;
    };
    struct Stage {
        ConvParams down;
        std::int64_t stride = 2;
        std::array<Block, 2> blocks;
    };

    static ImageEncoder init(const ImageEncoderConfig& config, Rng& rng);

    /// image: [Cin x S x S] with S divisible by the total stride.
    FeaturePyramid encode(const Tensor& image) const;
    void collect(ParamList& out, const std::string& prefix) const;
    const ImageEncoderConfig& config() const { return config_; }

private:
    ImageEncoderConfig config_;
    std::array<Stage, 4> stages_;
};

// ---------------------------------------------------------------------------
// Text encoder

struct TextEncoderConfig {
    std::int64_t vocab_size = 0;
    std::int64_t dim = 32;
    std::int64_t heads = 4;
    std::int64_t blocks = 2;
    std::int64_t ffn_dim = 64;
};

class TextEncoder {
public:
    struct Block {
        NormParams attn_norm;
        MhaParams attn;
        NormParams ffn_norm;
        LinearParams ffn_in;
        LinearParams ffn_out;
    };

    static TextEncoder init(const TextEncoderConfig& config, Rng& rng);

    /// [L x dim] features. Padding positions are computed but never attended to.
    Tensor encode(const TokenizedPrompt& prompt) const;
    void collect(ParamList& out, const std::string& prefix) const;
    const TextEncoderConfig& config() const { return config_; }

private:
    TextEncoderConfig config_;
    Tensor embedding_;  // [vocab x dim]
    std::vector<Block> blocks_;
    NormParams final_norm_;
};

}  // namespace lgs
