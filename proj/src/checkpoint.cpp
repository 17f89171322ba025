#include "lgs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "lgs/errors.hpp"

namespace lgs {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw CorruptionError(std::string("checkpoint truncated while reading ") + what + " at byte offset " +
                                  std::to_string(pos_));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string optim_name(const char* kind, const std::string& param) { return std::string("optim.") + kind + "." + param; }

nlohmann::ordered_json model_json(const ModelConfig& m) {
    nlohmann::ordered_json j;
    j["image_side"] = m.image_side;
    j["widths"] = m.image.widths;
    j["stem_stride"] = m.image.stem_stride;
    j["text_dim"] = m.text_dim;
    j["text_blocks"] = m.text_blocks;
    j["text_ffn"] = m.text_ffn;
    j["text_len"] = m.text_len;
    j["reduced_tokens"] = m.reduced_tokens;
    j["heads"] = m.heads;
    j["text_heads"] = m.text_heads;
    j["decoders"] = m.guide_decoders;
    j["prompt_mode"] = to_string(m.prompt_mode);
    return j;
}

ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.image_side = j.at("image_side").get<std::int64_t>();
    m.image.widths = j.at("widths").get<std::array<std::int64_t, 4>>();
    m.image.stem_stride = j.at("stem_stride").get<std::int64_t>();
    m.text_dim = j.at("text_dim").get<std::int64_t>();
    m.text_blocks = j.at("text_blocks").get<std::int64_t>();
    m.text_ffn = j.at("text_ffn").get<std::int64_t>();
    m.text_len = j.at("text_len").get<std::int64_t>();
    m.reduced_tokens = j.at("reduced_tokens").get<std::int64_t>();
    m.heads = j.at("heads").get<std::int64_t>();
    m.text_heads = j.at("text_heads").get<std::int64_t>();
    m.guide_decoders = j.at("decoders").get<int>();
    m.prompt_mode = parse_prompt_mode(j.at("prompt_mode").get<std::string>());
    return m;
}

}  // namespace

std::string encode_checkpoint(const CheckpointFile& file) {
    std::string out(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& t : file.tensors) {
        if (static_cast<std::int64_t>(t.values.size()) != numel(t.shape)) {
            throw DimensionError("checkpoint: tensor " + t.name + " has " + std::to_string(t.values.size()) +
                                 " values for shape " + shape_str(t.shape));
        }
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.values) put_f32(out, v);
    }
    const std::string meta = file.metadata.dump();
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    return out;
}

CheckpointFile decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic (expected LGSD)");
    }
    Reader in(bytes.substr(4));
    const auto version = in.u32("version");
    if (version != kCheckpointVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointFile file;
    const auto count = in.u32("tensor count");
    std::unordered_map<std::string, bool> names;
    for (std::uint32_t k = 0; k < count; ++k) {
        CheckpointTensor t;
        const auto name_len = in.u32("name length");
        t.name = std::string(in.take(name_len, "tensor name"));
        if (!names.emplace(t.name, true).second) throw CorruptionError("checkpoint: duplicate tensor " + t.name);
        const auto rank = in.u32("rank");
        if (rank == 0 || rank > 8) throw CorruptionError("checkpoint: implausible rank for " + t.name);
        std::uint64_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = in.u32("dimension");
            if (d == 0) throw CorruptionError("checkpoint: zero dimension in " + t.name);
            t.shape.push_back(d);
            n *= d;
        }
        if (n * 4 > in.remaining()) {
            throw CorruptionError("checkpoint: payload of " + t.name + " needs " + std::to_string(n * 4) +
                                  " bytes, " + std::to_string(in.remaining()) + " remain");
        }
        auto payload = in.take(static_cast<std::size_t>(n * 4), "payload");
        t.values.resize(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
            t.values[i] = std::bit_cast<float>(u);
        }
        file.tensors.push_back(std::move(t));
    }
    const auto meta_len = in.u32("metadata length");
    const auto meta = in.take(meta_len, "metadata");
    if (in.remaining() != 0) throw CorruptionError("checkpoint: trailing bytes after metadata");
    try {
        file.metadata = nlohmann::ordered_json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
    }
    return file;
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const TrainState& state,
                     const TrainConfig& config) {
    CheckpointFile file;
    const ParamList params = model.parameters();
    for (const auto& p : params) {
        file.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
    }
    if (state.optim.first_moment.size() == params.size()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            file.tensors.push_back({optim_name("m", params[i].name), params[i].tensor.shape(), state.optim.first_moment[i]});
            file.tensors.push_back({optim_name("v", params[i].name), params[i].tensor.shape(), state.optim.second_moment[i]});
        }
    }
    auto& meta = file.metadata;
    meta["model"] = model_json(model.config());
    meta["vocab"] = model.vocab().words();
    meta["train"] = to_json(config);
    meta["epoch"] = state.epoch;
    meta["step"] = state.optim.step;
    meta["rng"] = state.rng.state_hex();
    meta["best_val_dice"] = state.best_val_dice;
    meta["best_epoch"] = state.best_epoch;

    const std::string bytes = encode_checkpoint(file);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint not found: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    const CheckpointFile file = decode_checkpoint(bytes);

    ModelConfig model_config;
    TrainConfig train_config;
    std::vector<std::string> vocab_words;
    Rng::State rng_state{};
    std::int64_t epoch = 0, step = 0, best_epoch = -1;
    double best_val = -1.0;
    try {
        const auto& meta = file.metadata;
        model_config = model_from_json(meta.at("model"));
        train_config = train_config_from_json(meta.at("train"));
        vocab_words = meta.at("vocab").get<std::vector<std::string>>();
        epoch = meta.at("epoch").get<std::int64_t>();
        step = meta.at("step").get<std::int64_t>();
        rng_state = Rng::parse_state_hex(meta.at("rng").get<std::string>());
        best_val = meta.at("best_val_dice").get<double>();
        best_epoch = meta.at("best_epoch").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint: incomplete metadata: ") + e.what());
    }
    if (vocab_words.size() < 3) throw CorruptionError("checkpoint: vocabulary lacks specials");
    const Vocab vocab = Vocab::build({vocab_words.begin() + 3, vocab_words.end()});

    Rng init_rng(0);
    LoadedCheckpoint out{train_config, SegModel::init(model_config, vocab, init_rng), TrainState{}};
    std::unordered_map<std::string, const CheckpointTensor*> by_name;
    for (const auto& t : file.tensors) by_name.emplace(t.name, &t);

    auto params = out.model.parameters();
    auto fetch = [&](const std::string& name, const Shape& shape) -> const CheckpointTensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CorruptionError("checkpoint: missing tensor " + name);
        if (it->second->shape != shape) {
            throw CorruptionError("checkpoint: tensor " + name + " has shape " + shape_str(it->second->shape) +
                                  ", model expects " + shape_str(shape));
        }
        return *it->second;
    };
    // Validate everything before mutating the freshly built model.
    std::vector<const CheckpointTensor*> weights, m, v;
    const bool has_optim = by_name.count(optim_name("m", params.front().name)) > 0;
    for (const auto& p : params) {
        weights.push_back(&fetch(p.name, p.tensor.shape()));
        if (has_optim) {
            m.push_back(&fetch(optim_name("m", p.name), p.tensor.shape()));
            v.push_back(&fetch(optim_name("v", p.name), p.tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        std::copy(weights[i]->values.begin(), weights[i]->values.end(), dst.begin());
    }
    out.state.optim = AdamWState::for_params(params);
    if (has_optim) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            out.state.optim.first_moment[i] = m[i]->values;
            out.state.optim.second_moment[i] = v[i]->values;
        }
    }
    out.state.optim.step = step;
    out.state.rng.set_state(rng_state);
    out.state.epoch = epoch;
    out.state.best_val_dice = best_val;
    out.state.best_epoch = best_epoch;
    return out;
}

}  // namespace lgs
