#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "lgs/checkpoint.hpp"
#include "lgs/errors.hpp"

using namespace lgs;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& tag) {
    return fs::temp_directory_path() / ("lgs_ckpt_" + tag + "_" + std::to_string(::getpid()) + ".bin");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint32_t> bits(std::span<const float> v) {
    std::vector<std::uint32_t> out;
    for (float f : v) out.push_back(std::bit_cast<std::uint32_t>(f));
    return out;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.batch_size = 4;
    c.epochs = 2;
    c.seed = 21;
    return c;
}

}  // namespace

TEST_CASE("encoding matches a hand-built byte layout") {
    CheckpointFile f;
    f.tensors.push_back({"w", {2}, {1.0f, -2.0f}});
    f.metadata = nlohmann::ordered_json::object();
    const auto bytes = encode_checkpoint(f);
    const unsigned char expect[] = {
        'L', 'G', 'S', 'D', 1, 0, 0, 0,           // magic, version
        1, 0, 0, 0,                               // tensor count
        1, 0, 0, 0, 'w',                          // name
        1, 0, 0, 0, 2, 0, 0, 0,                   // rank, dims
        0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0,  // 1.0f, -2.0f
        2, 0, 0, 0, '{', '}'};
    REQUIRE(bytes.size() == sizeof expect);
    CHECK(std::memcmp(bytes.data(), expect, sizeof expect) == 0);
}

TEST_CASE("decode inverts encode bitwise, special values included") {
    CheckpointFile f;
    f.tensors.push_back({"a.weight", {2, 3},
                         {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::infinity(),
                          std::numeric_limits<float>::quiet_NaN(), 1.0f / 3.0f}});
    f.tensors.push_back({"b", {1, 1, 1}, {42.0f}});
    f.metadata["note"] = "x";
    const auto back = decode_checkpoint(encode_checkpoint(f));
    REQUIRE(back.tensors.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.tensors[i].name == f.tensors[i].name);
        CHECK(back.tensors[i].shape == f.tensors[i].shape);
        CHECK(bits(back.tensors[i].values) == bits(f.tensors[i].values));
    }
    CHECK(back.metadata["note"] == "x");
}

TEST_CASE("malformed checkpoints raise the matching error class") {
    CheckpointFile f;
    f.tensors.push_back({"w", {3}, {1, 2, 3}});
    f.metadata["k"] = 1;
    const auto good = encode_checkpoint(f);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
    try {
        decode_checkpoint(bad_magic);
    } catch (const VersionError&) {
        FAIL("bad magic reported as a version problem");
    } catch (const CorruptionError&) {
        FAIL("bad magic reported as corruption");
    } catch (const FormatError&) {
    }

    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), VersionError);

    // every strict prefix past the magic is corruption
    for (std::size_t n = 4; n < good.size(); ++n) {
        CAPTURE(n);
        CHECK_THROWS_AS(decode_checkpoint(std::string_view(good).substr(0, n)), CorruptionError);
    }
    CHECK_THROWS_AS(decode_checkpoint(good + "!"), CorruptionError);

    // declared dims larger than the payload
    auto lying = good;
    lying[4 + 4 + 4 + 4 + 1 + 4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(lying), CorruptionError);

    CheckpointFile mismatch;
    mismatch.tensors.push_back({"w", {2}, {1, 2, 3}});
    CHECK_THROWS_AS(encode_checkpoint(mismatch), DimensionError);
}

TEST_CASE("model save and load round trip bitwise") {
    auto cfg = tiny_config();
    cfg.prompt_mode = PromptMode::S3;
    cfg.guide_decoders = 2;
    const auto d = generate_dataset(10, 2, 3);
    auto model = init_model(cfg);
    auto state = init_train_state(model, cfg);
    train_epoch(model, d.subset(Split::Train), cfg, state);

    const auto path = temp_file("roundtrip");
    save_checkpoint(path, model, state, cfg);
    const auto raw = slurp(path);
    CHECK(raw.substr(0, 4) == "LGSD");

    const auto loaded = load_checkpoint(path);
    const auto a = model.parameters(), b = loaded.model.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CAPTURE(a[i].name);
        CHECK(a[i].name == b[i].name);
        CHECK(bits(a[i].tensor.data()) == bits(b[i].tensor.data()));
        CHECK(bits(state.optim.first_moment[i]) == bits(loaded.state.optim.first_moment[i]));
        CHECK(bits(state.optim.second_moment[i]) == bits(loaded.state.optim.second_moment[i]));
    }
    CHECK(loaded.state.optim.step == state.optim.step);
    CHECK(loaded.state.epoch == 1);
    CHECK(loaded.state.rng.state() == state.rng.state());
    CHECK(loaded.config.prompt_mode == PromptMode::S3);
    CHECK(loaded.model.config().effective_guides() == 2);
    CHECK(to_json(loaded.config).dump() == to_json(cfg).dump());

    const auto* r = d.subset(Split::Test).front();
    const auto p1 = model.predict(image_tensor(*r), r->prompt);
    const auto p2 = loaded.model.predict(image_tensor(*r), r->prompt);
    CHECK(bits(p1.logits.data()) == bits(p2.logits.data()));

    // a second save of the loaded state is byte-identical
    const auto path2 = temp_file("roundtrip2");
    save_checkpoint(path2, loaded.model, loaded.state, loaded.config);
    CHECK(slurp(path2) == raw);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("load failures leave nothing behind and name the class") {
    CHECK_THROWS_AS(load_checkpoint(temp_file("does_not_exist")), IoError);
    auto cfg = tiny_config();
    auto model = init_model(cfg);
    auto state = init_train_state(model, cfg);
    const auto path = temp_file("trunc");
    save_checkpoint(path, model, state, cfg);
    const auto raw = slurp(path);
    spit(path, raw.substr(0, raw.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path), CorruptionError);
    spit(path, "P5\n");
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    auto v2 = raw;
    v2[4] = 7;
    spit(path, v2);
    CHECK_THROWS_AS(load_checkpoint(path), VersionError);
    CHECK_FALSE(fs::exists(path.string() + ".tmp"));
    fs::remove(path);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted losses bitwise") {
    auto cfg = tiny_config();
    cfg.epochs = 3;
    const auto d = generate_dataset(15, 0, 11);
    const auto train = d.subset(Split::Train);

    std::vector<double> straight;
    {
        auto model = init_model(cfg);
        auto state = init_train_state(model, cfg);
        for (int e = 0; e < 3; ++e) {
            const auto s = train_epoch(model, train, cfg, state);
            straight.insert(straight.end(), s.batch_losses.begin(), s.batch_losses.end());
        }
    }

    std::vector<double> resumed;
    const auto path = temp_file("resume");
    {
        auto model = init_model(cfg);
        auto state = init_train_state(model, cfg);
        const auto s = train_epoch(model, train, cfg, state);
        resumed = s.batch_losses;
        save_checkpoint(path, model, state, cfg);
    }
    {
        auto loaded = load_checkpoint(path);
        while (loaded.state.epoch < 3) {
            const auto s = train_epoch(loaded.model, train, loaded.config, loaded.state);
            resumed.insert(resumed.end(), s.batch_losses.begin(), s.batch_losses.end());
        }
    }
    REQUIRE(straight.size() == 9);
    CHECK(resumed == straight);
    fs::remove(path);
}
