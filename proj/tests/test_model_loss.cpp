#include <doctest.h>

#include <cmath>
#include <set>

#include "lgs/data.hpp"
#include "lgs/errors.hpp"
#include "lgs/loss.hpp"
#include "lgs/model.hpp"
#include "lgs/ops.hpp"

using namespace lgs;

namespace {

Tensor vec(std::vector<float> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return Tensor::from_data({n}, std::move(v));
}

Tensor rand_image(Rng& rng, std::int64_t side = 64) {
    std::vector<float> v(static_cast<std::size_t>(side * side));
    for (auto& x : v) x = rng.uniform();
    return Tensor::from_data({1, side, side}, std::move(v));
}

const PromptStages kPrompt{"unilateral pulmonary infection", "one infected areas", "located at left upper lung"};

SegModel make_model(PromptMode mode, int guides, std::uint64_t seed = 5) {
    ModelConfig c;
    c.prompt_mode = mode;
    c.guide_decoders = guides;
    Rng rng(seed);
    return SegModel::init(c, grammar_vocab(), rng);
}

}  // namespace

TEST_CASE("dice loss closed forms") {
    CHECK(dice_loss(Tensor::full({16}, 1.0f), Tensor::full({16}, 1.0f)).item() == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(dice_loss(Tensor::full({16}, 1.0f), Tensor::zeros({16})).item() == doctest::Approx(1.0 - 1.0 / 17.0));
    CHECK(dice_loss(vec({1, 1, 0, 0}), vec({0, 1, 1, 0})).item() == doctest::Approx(0.4));
    CHECK_THROWS_AS(dice_loss(Tensor::zeros({4}), Tensor::zeros({5})), DimensionError);
}

TEST_CASE("bce closed forms and per-pixel oracle") {
    CHECK(bce_loss(Tensor::full({8}, 0.5f), vec({0, 1, 0, 1, 1, 1, 0, 0})).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(vec({1, 0, 1, 0}), vec({1, 0, 1, 0})).item() <= 1e-6f);

    Rng rng(1);
    std::vector<float> p(8), t(8);
    for (auto& x : p) x = rng.uniform(0.05f, 0.95f);
    for (auto& x : t) x = rng.bernoulli(0.5f) ? 1.0f : 0.0f;
    double expect = 0;
    for (std::size_t i = 0; i < 8; ++i) expect -= t[i] * std::log(static_cast<double>(p[i])) + (1 - t[i]) * std::log(1.0 - p[i]);
    CHECK(bce_loss(vec(p), vec(t)).item() == doctest::Approx(expect / 8).epsilon(1e-6));
    CHECK_THROWS_AS(bce_loss(Tensor::zeros({4}), Tensor::zeros({2, 2})), DimensionError);
}

TEST_CASE("combined loss is the exact sum, non-negative, with correct gradient") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> p(9), t(9);
        for (auto& x : p) x = rng.uniform(0.01f, 0.99f);
        for (auto& x : t) x = rng.bernoulli(0.4f) ? 1.0f : 0.0f;
        const float d = dice_loss(vec(p), vec(t)).item(), b = bce_loss(vec(p), vec(t)).item();
        const float c = combined_loss(vec(p), vec(t)).item();
        CHECK(c == d + b);
        CHECK(c >= 0.0f);
    }
    CHECK(combined_loss(vec({1, 0, 0, 1}), vec({1, 0, 0, 1})).item() <= 1e-6f);

    auto probs = vec({0.2f, 0.7f, 0.4f, 0.9f, 0.55f, 0.1f});
    auto target = vec({0, 1, 1, 1, 0, 0});
    auto report = grad_check([&] { return combined_loss(probs, target); }, {{"probs", probs}});
    CHECK(report.passed);
}

TEST_CASE("metrics: perfect, disjoint and hand count") {
    const BinaryMask a{1, 1, 0, 0}, b{0, 1, 1, 0};
    auto perfect = segmentation_metrics(a, a);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.dice == 1.0);
    CHECK(perfect.jaccard == 1.0);
    auto disjoint = segmentation_metrics(BinaryMask{1, 0, 0, 0}, BinaryMask{0, 0, 1, 1});
    CHECK(disjoint.dice == 0.0);
    CHECK(disjoint.jaccard == 0.0);
    auto m = segmentation_metrics(a, b);
    CHECK(m.accuracy == 0.5);
    CHECK(m.dice == 0.5);
    CHECK(m.jaccard == doctest::Approx(1.0 / 3.0));
    CHECK(std::abs(m.dice - 2 * m.jaccard / (1 + m.jaccard)) < 1e-12);
    auto empty = segmentation_metrics(BinaryMask(4, 0), BinaryMask(4, 0));
    CHECK(empty.dice == 1.0);
    CHECK(empty.jaccard == 1.0);
    CHECK(empty.accuracy == 1.0);
    CHECK_THROWS_AS(segmentation_metrics(BinaryMask{1}, BinaryMask{1, 0}), DimensionError);
    CHECK_THROWS_AS(segmentation_metrics(BinaryMask{2}, BinaryMask{1}), ContractError);
}

TEST_CASE("metrics agree with counting on every 2x2 mask pair") {
    for (int pi = 0; pi < 16; ++pi)
        for (int ti = 0; ti < 16; ++ti) {
            BinaryMask p(4), t(4);
            int tp = 0, tn = 0, fp = 0, fn = 0;
            for (int k = 0; k < 4; ++k) {
                p[static_cast<std::size_t>(k)] = (pi >> k) & 1;
                t[static_cast<std::size_t>(k)] = (ti >> k) & 1;
                const bool pp = (pi >> k) & 1, tt = (ti >> k) & 1;
                tp += pp && tt, tn += !pp && !tt, fp += pp && !tt, fn += !pp && tt;
            }
            auto m = segmentation_metrics(p, t);
            const double dice = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
            const double jac = tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp + fn);
            CHECK(m.accuracy == (tp + tn) / 4.0);
            CHECK(m.dice == dice);
            CHECK(m.jaccard == jac);
            CHECK(std::abs(m.dice - 2 * m.jaccard / (1 + m.jaccard)) < 1e-6);
            CHECK(m.jaccard <= m.dice);
        }
}

TEST_CASE("threshold is strict at one half") {
    CHECK(threshold_mask(std::vector<float>{0.2f, 0.5f, 0.51f, 0.9f}) == BinaryMask{0, 0, 1, 1});
}

TEST_CASE("prompt assembly and mode parsing") {
    CHECK(assemble_prompt(kPrompt, PromptMode::S123) ==
          "unilateral pulmonary infection, one infected areas, located at left upper lung");
    CHECK(assemble_prompt(kPrompt, PromptMode::S12) == "unilateral pulmonary infection, one infected areas");
    CHECK(assemble_prompt(kPrompt, PromptMode::S3) == "located at left upper lung");
    CHECK(assemble_prompt(kPrompt, PromptMode::None).empty());
    CHECK_THROWS_AS(assemble_prompt({"a", "", "c"}, PromptMode::S12), InputError);
    CHECK_NOTHROW(assemble_prompt({"a", "", "c"}, PromptMode::S3));
    for (auto m : {PromptMode::None, PromptMode::S12, PromptMode::S3, PromptMode::S123})
        CHECK(parse_prompt_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_prompt_mode("s2"), ConfigError);
}

TEST_CASE("model config validation") {
    ModelConfig c;
    c.guide_decoders = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.guide_decoders = 2;
    c.image_side = 48;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.image_side = 64;
    c.image.stem_stride = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("decoder stack layout follows the guide count, deepest first") {
    for (int k = 0; k <= 3; ++k) {
        auto m = make_model(PromptMode::S123, k);
        for (int s = 0; s < 3; ++s) {
            CHECK(std::holds_alternative<GuideDecoderParams>(m.stages()[static_cast<std::size_t>(s)]) == (s < k));
        }
    }
    auto none = make_model(PromptMode::None, 3);
    for (const auto& st : none.stages()) CHECK(std::holds_alternative<PlainDecoderParams>(st));
    CHECK_THROWS_AS(none.guide_stage(0), ContractError);
}

TEST_CASE("model output shape and prompt handling") {
    Rng rng(3);
    auto img = rand_image(rng);
    auto m = make_model(PromptMode::S123, 3);
    auto logits = m.forward(img, kPrompt);
    CHECK(logits.shape() == Shape{1, 64, 64});
    auto pred = m.predict(img, kPrompt);
    for (float p : pred.probabilities.data()) {
        CHECK(p > 0.0f);
        CHECK(p < 1.0f);
    }
    for (auto v : pred.mask) CHECK(v <= 1);
    CHECK_THROWS_AS(m.forward(img, {"a", "", "c"}), InputError);
    CHECK_THROWS_AS(m.forward(rand_image(rng, 32), kPrompt), DimensionError);

    auto plain = make_model(PromptMode::None, 0);
    auto a = plain.predict(img, kPrompt);
    auto b = plain.predict(img, {"bilateral pulmonary infection", "four infected areas", "located at right lower lung"});
    for (std::size_t i = 0; i < a.logits.data().size(); ++i) CHECK(a.logits.data()[i] == b.logits.data()[i]);
    CHECK_NOTHROW(plain.forward(img, {}));
}

TEST_CASE("closed gates make the full model blind to the prompt") {
    Rng rng(4);
    auto img = rand_image(rng);
    auto m = make_model(PromptMode::S123, 3);
    auto ref = m.predict(img, kPrompt);
    const PromptStages other{"bilateral pulmonary infection", "three infected areas",
                             "located at left lower lung, right upper lung, right lower lung"};
    auto alt = m.predict(img, other);
    for (std::size_t i = 0; i < ref.logits.data().size(); ++i) CHECK(ref.logits.data()[i] == alt.logits.data()[i]);

    m.guide_stage(1).alpha.mutable_data()[0] = 0.5f;
    auto opened = m.predict(img, other);
    bool differs = false;
    for (std::size_t i = 0; i < ref.logits.data().size(); ++i) differs = differs || ref.logits.data()[i] != opened.logits.data()[i];
    CHECK(differs);
}

TEST_CASE("parameter names are unique and stable") {
    auto m = make_model(PromptMode::S123, 2);
    auto params = m.parameters();
    std::set<std::string> names;
    for (const auto& p : params) CHECK(names.insert(p.name).second);
    CHECK(names.count("decoder0.alpha") == 1);
    CHECK(names.count("decoder1.alpha") == 1);
    CHECK(names.count("decoder2.alpha") == 0);
    CHECK(names.count("head.weight") == 1);
    auto again = make_model(PromptMode::S123, 2);
    auto p2 = again.parameters();
    REQUIRE(p2.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(p2[i].name == params[i].name);
        CHECK(std::equal(p2[i].tensor.data().begin(), p2[i].tensor.data().end(), params[i].tensor.data().begin()));
    }
}

TEST_CASE("one-stage 8x8 model passes an end-to-end gradient check") {
    ModelConfig mc;
    mc.image_side = 8;
    mc.image.stem_stride = 1;
    mc.image.widths = {4, 8, 8, 8};
    mc.text_dim = 8;
    mc.text_blocks = 1;
    mc.text_ffn = 8;
    mc.text_len = 8;
    mc.reduced_tokens = 2;
    mc.guide_decoders = 1;
    Rng rng(6);
    auto model = SegModel::init(mc, grammar_vocab(), rng);
    model.guide_stage(0).alpha.mutable_data()[0] = 0.5f;
    auto img = rand_image(rng, 8);
    std::vector<float> w(64);
    for (auto& v : w) v = rng.uniform(-1.0f, 1.0f);
    auto report = grad_check(centered_readout([&] { return model.forward(img, kPrompt); }, Tensor::from_data({1, 8, 8}, w)),
                             model.parameters());
    for (const auto& pc : report.params) {
        CAPTURE(pc.name);
        CHECK(pc.passed);
    }
}
