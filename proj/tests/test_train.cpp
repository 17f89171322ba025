#include <doctest.h>

#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"
#include "lgs/train.hpp"

using namespace lgs;

namespace {

// plain double Adam with decoupled decay, one scalar
struct AdamOracle {
    double theta, m = 0, v = 0;
    int t = 0;
    void step(double g, double lr, double wd, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        ++t;
        theta *= 1.0 - lr * wd;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        theta -= lr * mh / (std::sqrt(vh) + eps);
    }
};

void set_grad(Tensor& p, float g) {
    p.zero_grad();
    backward(scale(sum(p), g));
}

TrainConfig small_config() {
    TrainConfig c;
    c.batch_size = 4;
    c.epochs = 2;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("adamw first step matches the closed form") {
    for (float g : {0.2f, -3.0f, 1e-4f}) {
        auto theta = Tensor::from_data({1}, {0.5f}, true);
        ParamList params{{"theta", theta}};
        auto state = AdamWState::for_params(params);
        set_grad(theta, g);
        adamw_step(params, state, 1e-3, {});
        // bias-corrected moments at t = 1 are g and g^2
        const double expect = 0.5 * (1 - 1e-3 * 0.01) - 1e-3 * g / (std::abs(g) + 1e-8);
        CHECK(theta.item() == doctest::Approx(expect).epsilon(1e-6));
        CHECK(state.step == 1);
    }
}

TEST_CASE("adamw tracks a double-precision oracle over several steps") {
    for (double wd : {0.0, 0.01}) {
        auto theta = Tensor::from_data({1}, {-0.7f}, true);
        ParamList params{{"theta", theta}};
        auto state = AdamWState::for_params(params);
        AdamOracle oracle{-0.7};
        AdamWConfig cfg;
        cfg.weight_decay = wd;
        const float grads[] = {0.3f, -0.1f, 0.05f, 0.8f, -0.4f};
        for (float g : grads) {
            set_grad(theta, g);
            adamw_step(params, state, 2e-2, cfg);
            oracle.step(g, 2e-2, wd);
        }
        CHECK(theta.item() == doctest::Approx(oracle.theta).epsilon(1e-5));
        CHECK(state.step == 5);
    }
}

TEST_CASE("adamw decay-only path and fixed point") {
    auto theta = Tensor::from_data({3}, {1.0f, -2.0f, 0.25f}, true);
    ParamList params{{"theta", theta}};
    auto state = AdamWState::for_params(params);
    AdamWConfig cfg;
    const double lr = 3e-4;
    const auto decay = static_cast<float>(1.0 - lr * cfg.weight_decay);
    adamw_step(params, state, lr, cfg);
    CHECK(theta.data()[0] == 1.0f * decay);
    CHECK(theta.data()[1] == -2.0f * decay);
    CHECK(theta.data()[2] == 0.25f * decay);

    cfg.weight_decay = 0.0;
    const std::vector<float> before(theta.data().begin(), theta.data().end());
    theta.zero_grad();
    for (int i = 0; i < 3; ++i) adamw_step(params, state, lr, cfg);
    CHECK(std::vector<float>(theta.data().begin(), theta.data().end()) == before);

    ParamList more{{"theta", theta}, {"extra", Tensor::zeros({2}, true)}};
    CHECK_THROWS_AS(adamw_step(more, state, lr, cfg), DimensionError);
}

TEST_CASE("cosine schedule: exact endpoints, midpoint and monotone decay") {
    CHECK(cosine_lr(0, 1000, 3e-4, 1e-6) == 3e-4);
    CHECK(cosine_lr(1000, 1000, 3e-4, 1e-6) == 1e-6);
    CHECK(cosine_lr(500, 1000, 3e-4, 1e-6) == doctest::Approx(1.505e-4).epsilon(1e-12));
    double prev = 1.0;
    for (std::int64_t s = 0; s <= 1000; ++s) {
        const double lr = cosine_lr(s, 1000, 3e-4, 1e-6);
        CHECK(lr <= prev);
        CHECK(lr >= 1e-6);
        CHECK(lr <= 3e-4);
        prev = lr;
    }
    CHECK(cosine_lr(0, 1, 3e-4, 1e-6) == 3e-4);
    CHECK(cosine_lr(1, 1, 3e-4, 1e-6) == 1e-6);
    CHECK_THROWS_AS(cosine_lr(-1, 10, 3e-4, 1e-6), ContractError);
    CHECK_THROWS_AS(cosine_lr(11, 10, 3e-4, 1e-6), ContractError);
    CHECK_THROWS_AS(cosine_lr(0, 0, 3e-4, 1e-6), ContractError);
}

TEST_CASE("config defaults, json round trip and rejection") {
    TrainConfig d;
    CHECK(d.batch_size == 32);
    CHECK(d.lr_max == 3e-4);
    CHECK(d.lr_min == 1e-6);
    CHECK(d.adamw.weight_decay == 0.01);
    CHECK(d.prompt_mode == PromptMode::S123);
    CHECK(d.guide_decoders == 3);

    TrainConfig c;
    c.batch_size = 7;
    c.epochs = 3;
    c.seed = 123456789012345ULL;
    c.prompt_mode = PromptMode::S12;
    c.guide_decoders = 1;
    c.data_fraction = 0.25;
    c.adamw.weight_decay = 0.05;
    c.zoom_probability = 0.0f;
    const auto back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
    CHECK(to_json(back).dump() == to_json(c).dump());

    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batchsize", 3}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"prompt_mode", "s4"}}), ConfigError);

    TrainConfig bad;
    bad.guide_decoders = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.data_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.lr_min = bad.lr_max;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("data fractions take a ceil-sized prefix") {
    std::vector<SampleRecord> recs(80);
    std::vector<const SampleRecord*> ptrs;
    for (const auto& r : recs) ptrs.push_back(&r);
    CHECK(take_fraction(ptrs, 0.25).size() == 20);
    CHECK(take_fraction(ptrs, 0.15).size() == 12);
    CHECK(take_fraction(ptrs, 1.0).size() == 80);
    CHECK(take_fraction(ptrs, 0.001).size() == 1);
    CHECK(take_fraction(ptrs, 0.1).front() == ptrs.front());
    CHECK_THROWS_AS(take_fraction(ptrs, 0.0), ConfigError);
    CHECK_THROWS_AS(take_fraction(ptrs, 1.5), ConfigError);
}

TEST_CASE("last partial batch is kept") {
    CHECK(batches_per_epoch(10, 4) == 3);
    CHECK(batches_per_epoch(8, 4) == 2);
    CHECK(batches_per_epoch(1, 32) == 1);
    const auto d = generate_dataset(13, 0, 2);
    const auto train = d.subset(Split::Train);
    REQUIRE(train.size() == 10);
    auto cfg = small_config();
    auto model = init_model(cfg);
    auto state = init_train_state(model, cfg);
    const auto stats = train_epoch(model, train, cfg, state);
    CHECK(stats.batch_losses.size() == 3);
    CHECK(state.optim.step == 3);
    CHECK(state.epoch == 1);
    CHECK_THROWS_AS(train_epoch(model, {}, cfg, state), InputError);
}

TEST_CASE("same seed and data give a bitwise identical loss sequence") {
    const auto d = generate_dataset(30, 0, 4);
    const auto train = d.subset(Split::Train);
    auto cfg = small_config();
    cfg.batch_size = 2;
    cfg.zoom_probability = 0.5f;  // exercise the augmentation stream too
    auto run = [&] {
        auto model = init_model(cfg);
        auto state = init_train_state(model, cfg);
        return train_epoch(model, train, cfg, state).batch_losses;
    };
    const auto a = run(), b = run();
    REQUIRE(a.size() == 12);
    CHECK(a == b);
    cfg.seed += 1;
    CHECK(run() != a);
}

TEST_CASE("evaluate: oracle stub, uniform mean and recomputation") {
    const auto d = generate_dataset(6, 4, 8);
    const auto test = d.subset(Split::Test);
    auto perfect = evaluate([](const SampleRecord& r) { return r.mask; }, test);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.dice == 1.0);
    CHECK(perfect.jaccard == 1.0);
    CHECK(perfect.samples == 4);

    // first sample exact, second its complement: dice 1 and 0
    const std::vector<const SampleRecord*> two{test[0], test[1]};
    auto half = evaluate(
        [&](const SampleRecord& r) {
            BinaryMask m = r.mask;
            if (&r == test[1])
                for (auto& v : m) v = v ? 0 : 1;
            return m;
        },
        two);
    CHECK(half.dice == 0.5);
    CHECK_THROWS_AS(evaluate([](const SampleRecord& r) { return r.mask; }, {}), InputError);

    auto cfg = small_config();
    auto model = init_model(cfg);
    const auto got = evaluate(model, test);
    double acc = 0, dice = 0, jac = 0;
    for (const auto* r : test) {
        const auto pred = model.predict(image_tensor(*r), r->prompt).mask;
        const auto s = segmentation_metrics(pred, r->mask);
        acc += s.accuracy;
        dice += s.dice;
        jac += s.jaccard;
    }
    CHECK(got.accuracy == doctest::Approx(acc / 4).epsilon(1e-12));
    CHECK(got.dice == doctest::Approx(dice / 4).epsilon(1e-12));
    CHECK(got.jaccard == doctest::Approx(jac / 4).epsilon(1e-12));
    const auto again = evaluate(model, test);
    CHECK(again.dice == got.dice);
}

TEST_CASE("train keeps the best validation epoch and calls hooks") {
    const auto d = generate_dataset(20, 0, 6);
    auto cfg = small_config();
    cfg.epochs = 3;
    auto model = init_model(cfg);
    auto state = init_train_state(model, cfg);
    int epochs_seen = 0, bests = 0;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog&, const SegModel&, const TrainState&) { ++epochs_seen; };
    hooks.on_best = [&](const SegModel&, const TrainState&) { ++bests; };
    const auto result = train(model, d, cfg, state, hooks);
    REQUIRE(result.log.size() == 3);
    CHECK(epochs_seen == 3);
    CHECK(bests >= 1);
    double best = -1;
    std::int64_t best_epoch = -1;
    for (const auto& l : result.log)
        if (l.val_dice > best) {
            best = l.val_dice;
            best_epoch = l.epoch;
        }
    CHECK(result.best_epoch == best_epoch);
    CHECK(result.best_val_dice == best);

    auto snap = ParamSnapshot::take(model);
    auto params = model.parameters();
    const float keep = params.front().tensor.data()[0];
    params.front().tensor.mutable_data()[0] = keep + 1.0f;
    snap.restore(model);
    CHECK(model.parameters().front().tensor.data()[0] == keep);
}

TEST_CASE("one 8-sample batch overfits within 500 steps") {
    const auto d = generate_dataset(10, 0, 5);
    const auto train = d.subset(Split::Train);
    REQUIRE(train.size() == 8);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 500;
    cfg.seed = 1;
    auto model = init_model(cfg);
    auto state = init_train_state(model, cfg);
    double first = 0, last = 0;
    for (int e = 0; e < 500; ++e) {
        const auto s = train_epoch(model, train, cfg, state);
        if (e == 0) first = s.mean_loss;
        last = s.mean_loss;
    }
    CAPTURE(first);
    CHECK(last < 0.05);
}
