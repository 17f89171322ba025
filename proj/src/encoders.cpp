#include "lgs/encoders.hpp"

#include <cctype>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

Vocab Vocab::build(const std::vector<std::string>& words) {
    Vocab v;
    for (const char* special : {"[PAD]", "[UNK]", "[CLS]"}) {
        v.ids_.emplace(special, static_cast<std::int64_t>(v.words_.size()));
        v.words_.emplace_back(special);
    }
    for (const auto& w : words) {
        if (!v.ids_.emplace(w, static_cast<std::int64_t>(v.words_.size())).second) {
            throw ConfigError("vocab: duplicate word '" + w + "'");
        }
        v.words_.push_back(w);
    }
    return v;
}

std::int64_t Vocab::id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::word(std::int64_t id) const {
    if (id < 0 || id >= size()) throw IndexError("vocab: id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
}

TokenizedPrompt tokenize(const std::string& prompt, const Vocab& vocab, std::int64_t max_len) {
    if (max_len < 2) throw ContractError("tokenize: max_len must be >= 2");
    TokenizedPrompt t;
    t.ids.push_back(kClsId);
    std::string current;
    auto flush = [&] {
        if (!current.empty() && t.length() < max_len) t.ids.push_back(vocab.id(current));
        current.clear();
    };
    for (char ch : prompt) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc) || ch == ',') {
            flush();
        } else {
            current.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    flush();
    const auto real = t.ids.size();
    t.ids.resize(static_cast<std::size_t>(max_len), kPadId);
    t.mask.assign(static_cast<std::size_t>(max_len), false);
    std::fill_n(t.mask.begin(), real, true);
    return t;
}

ConvParams ConvParams::init(std::int64_t cin, std::int64_t cout, std::int64_t kernel, Rng& rng) {
    const auto fan_in = cin * kernel * kernel;
    return {uniform_param({cout, cin, kernel, kernel}, fan_in, rng), uniform_param({cout}, fan_in, rng)};
}

void ConvParams::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Tensor channel_norm(const Tensor& x, const NormParams& p) {
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor tokens = transpose(reshape(x, {c, h * w}));
    return reshape(transpose(layer_norm(tokens, p)), {c, h, w});
}

ImageEncoder ImageEncoder::init(const ImageEncoderConfig& config, Rng& rng) {
    if (config.stem_stride < 1) throw ConfigError("image encoder: stem stride must be >= 1");
    for (std::size_t i = 1; i < config.widths.size(); ++i) {
        if (config.widths[i] < config.widths[i - 1]) throw ConfigError("image encoder: widths must not decrease");
    }
    ImageEncoder enc;
    enc.config_ = config;
    std::int64_t cin = config.in_channels;
    for (std::size_t s = 0; s < 4; ++s) {
        auto& stage = enc.stages_[s];
        const auto cout = config.widths[s];
        if (s == 0) {
            stage.stride = config.stem_stride;
            stage.down = ConvParams::init(cin, cout, config.stem_stride == 1 ? 3 : config.stem_stride, rng);
        } else {
            stage.stride = 2;
            stage.down = ConvParams::init(cin, cout, 2, rng);
        }
        for (auto& block : stage.blocks) {
            block.conv = ConvParams::init(cout, cout, 3, rng);
            block.norm = NormParams::init(cout);
        }
        cin = cout;
    }
    return enc;
}

FeaturePyramid ImageEncoder::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != config_.in_channels) {
        throw DimensionError("encode_image: expected [" + std::to_string(config_.in_channels) + " x S x S], got " +
                             shape_str(image.shape()));
    }
    const auto side = image.dim(1);
    if (image.dim(2) != side || side % config_.total_stride() != 0) {
        throw DimensionError("encode_image: input " + shape_str(image.shape()) + " must be square with side divisible by " +
                             std::to_string(config_.total_stride()));
    }
    FeaturePyramid out;
    Tensor x = image;
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& stage = stages_[s];
        const bool stem_3x3 = s == 0 && stage.stride == 1;
        x = conv2d(x, stage.down.weight, stage.down.bias, stage.stride, stem_3x3 ? 1 : 0);
        for (const auto& block : stage.blocks) {
            x = relu(channel_norm(conv2d(x, block.conv.weight, block.conv.bias, 1, 1), block.norm));
        }
        out.levels[s] = x;
    }
    return out;
}

void ImageEncoder::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string sp = prefix + ".stage" + std::to_string(s);
        stages_[s].down.collect(out, sp + ".down");
        for (std::size_t b = 0; b < 2; ++b) {
            stages_[s].blocks[b].conv.collect(out, sp + ".block" + std::to_string(b) + ".conv");
            stages_[s].blocks[b].norm.collect(out, sp + ".block" + std::to_string(b) + ".norm");
        }
    }
}

TextEncoder TextEncoder::init(const TextEncoderConfig& config, Rng& rng) {
    if (config.vocab_size < 3) throw ConfigError("text encoder: vocabulary must contain the specials");
    TextEncoder enc;
    enc.config_ = config;
    enc.embedding_ = uniform_param({config.vocab_size, config.dim}, 1, rng);
    for (std::int64_t b = 0; b < config.blocks; ++b) {
        Block block;
        block.attn_norm = NormParams::init(config.dim);
        block.attn = MhaParams::init(config.dim, config.heads, rng);
        block.ffn_norm = NormParams::init(config.dim);
        block.ffn_in = LinearParams::init(config.dim, config.ffn_dim, rng);
        block.ffn_out = LinearParams::init(config.ffn_dim, config.dim, rng);
        enc.blocks_.push_back(std::move(block));
    }
    enc.final_norm_ = NormParams::init(config.dim);
    return enc;
}

Tensor TextEncoder::encode(const TokenizedPrompt& prompt) const {
    if (prompt.ids.empty() || prompt.ids.size() != prompt.mask.size()) {
        throw ContractError("encode_text: malformed tokenized prompt");
    }
    // PAD keys never contribute, so real-token features do not depend on how
    // much padding follows them.
    Tensor x = add(embedding(embedding_, prompt.ids), posenc1d(prompt.length(), config_.dim));
    const KeyMask mask = prompt.mask;
    for (const auto& block : blocks_) {
        x = add(x, mhsa(layer_norm(x, block.attn_norm), block.attn, mask));
        Tensor hidden = relu(linear(layer_norm(x, block.ffn_norm), block.ffn_in));
        x = add(x, linear(hidden, block.ffn_out));
    }
    return layer_norm(x, final_norm_);
}

void TextEncoder::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".embedding", embedding_});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        blocks_[b].attn_norm.collect(out, bp + ".attn_norm");
        blocks_[b].attn.collect(out, bp + ".attn");
        blocks_[b].ffn_norm.collect(out, bp + ".ffn_norm");
        blocks_[b].ffn_in.collect(out, bp + ".ffn_in");
        blocks_[b].ffn_out.collect(out, bp + ".ffn_out");
    }
    final_norm_.collect(out, prefix + ".final_norm");
}

}  // namespace lgs
