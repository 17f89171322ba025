#include "lgs/gradcheck_suite.hpp"

#include "lgs/data.hpp"
#include "lgs/encoders.hpp"
#include "lgs/guide_decoder.hpp"
#include "lgs/loss.hpp"
#include "lgs/model.hpp"
#include "lgs/nn.hpp"
#include "lgs/ops.hpp"

namespace lgs {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v));
}

GuideDecoderConfig small_stage() {
    GuideDecoderConfig c;
    c.visual_dim = 8;
    c.skip_dim = 4;
    c.grid = 2;
    c.text_dim = 8;
    c.text_len = 5;
    c.reduced_tokens = 2;
    c.heads = 4;
    return c;
}

}  // namespace

std::vector<ComponentCheck> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
    Rng rng(seed);
    std::vector<ComponentCheck> out;
    auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<NamedTensor> params) {
        out.push_back({name, grad_check(f, std::move(params), options)});
    };
    auto check_out = [&](const std::string& name, const std::function<Tensor()>& forward, const Tensor& r,
                         std::vector<NamedTensor> params) {
        check(name, centered_readout(forward, r), std::move(params));
    };

    {
        Tensor x = random_tensor({5, 6}, rng);
        auto p = LinearParams::init(6, 3, rng);
        Tensor r = random_tensor({5, 3}, rng);
        check_out("linear", [&] { return linear(x, p); }, r, {{"x", x}, {"weight", p.weight}, {"bias", p.bias}});
    }
    {
        Tensor x = random_tensor({3, 5, 5}, rng);
        auto p = ConvParams::init(3, 4, 3, rng);
        Tensor r = random_tensor({4, 5, 5}, rng);
        check_out("conv3x3", [&] { return conv2d(x, p.weight, p.bias, 1, 1); }, r,
              {{"x", x}, {"weight", p.weight}, {"bias", p.bias}});
    }
    {
        Tensor x = random_tensor({2, 6, 6}, rng);
        auto p = ConvParams::init(2, 3, 2, rng);
        Tensor r = random_tensor({3, 3, 3}, rng);
        check_out("conv2x2_stride2", [&] { return conv2d(x, p.weight, p.bias, 2, 0); }, r,
              {{"x", x}, {"weight", p.weight}, {"bias", p.bias}});
    }
    {
        Tensor x = random_tensor({4, 8}, rng);
        auto p = NormParams::init(8);
        p.gamma = random_tensor({8}, rng, 0.5f, 1.5f);
        p.beta = random_tensor({8}, rng);
        Tensor r = random_tensor({4, 8}, rng);
        check_out("layer_norm", [&] { return layer_norm(x, p); }, r,
              {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}});
    }
    {
        Tensor x = random_tensor({3, 4, 4}, rng);
        auto p = NormParams::init(3);
        p.gamma = random_tensor({3}, rng, 0.5f, 1.5f);
        Tensor r = random_tensor({3, 4, 4}, rng);
        check_out("channel_norm", [&] { return channel_norm(x, p); }, r,
              {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}});
    }
    {
        auto p = ConvParams::init(2, 16, 3, rng);
        Tensor input = random_tensor({2, 2, 2}, rng);
        Tensor r = random_tensor({1, 8, 8}, rng);
        check_out("subpixel_head", [&] { return pixel_shuffle(conv2d(input, p.weight, p.bias, 1, 1), 4); }, r,
                  {{"x", input}, {"weight", p.weight}, {"bias", p.bias}});
    }
    {
        Tensor x = random_tensor({3, 5}, rng, -2.0f, 2.0f);
        Tensor r = random_tensor({3, 5}, rng);
        check_out("softmax", [&] { return softmax(x, 1); }, r, {{"x", x}});
    }
    {
        Tensor x = random_tensor({5, 8}, rng);
        auto p = MhaParams::init(8, 4, rng);
        Tensor r = random_tensor({5, 8}, rng);
        ParamList params{{"x", x}};
        p.collect(params, "mhsa");
        check_out("mhsa", [&] { return mhsa(x, p); }, r, params);
    }
    {
        Tensor q = random_tensor({4, 8}, rng);
        Tensor kv = random_tensor({6, 8}, rng);
        const std::vector<bool> mask{true, true, true, true, false, false};
        auto p = MhaParams::init(8, 4, rng);
        Tensor r = random_tensor({4, 8}, rng);
        ParamList params{{"q", q}, {"kv", kv}};
        p.collect(params, "mhca");
        check_out("mhca", [&] { return mhca(q, kv, p, mask); }, r, params);
    }

    auto stage = GuideDecoderParams::init(small_stage(), rng);
    stage.alpha.mutable_data()[0] = 0.7f;  // open gate so the text branch carries gradient
    // at this width a fresh bias draw can push every reduced token below zero
    stage.token_reduce.bias = Tensor::full({stage.config.reduced_tokens}, 0.1f, true);
    const auto& sc = stage.config;
    const std::vector<bool> text_mask{true, true, true, false, false};
    Tensor text = random_tensor({sc.text_len, sc.text_dim}, rng);
    Tensor visual = random_tensor({sc.grid * sc.grid, sc.visual_dim}, rng);
    Tensor skip = random_tensor({sc.skip_dim, 2 * sc.grid, 2 * sc.grid}, rng);
    {
        Tensor r = random_tensor({sc.reduced_tokens, sc.visual_dim}, rng);
        ParamList params{{"text", text}, {"text_proj", stage.text_proj}};
        stage.token_reduce.collect(params, "token_reduce");
        check_out("text_projection", [&] { return project_text(text, text_mask, stage); }, r, params);
    }
    {
        Tensor r = random_tensor({sc.grid * sc.grid, sc.visual_dim}, rng);
        ParamList params{{"visual", visual}};
        stage.self_attn.collect(params, "self_attn");
        stage.self_norm.collect(params, "self_norm");
        check_out("visual_evolution", [&] { return evolve_visual(visual, stage); }, r, params);
    }
    {
        Tensor projected = random_tensor({sc.reduced_tokens, sc.visual_dim}, rng);
        Tensor r = random_tensor({sc.grid * sc.grid, sc.visual_dim}, rng);
        ParamList params{{"evolved", visual}, {"text", projected}, {"alpha", stage.alpha}};
        stage.cross_attn.collect(params, "cross_attn");
        stage.cross_norm.collect(params, "cross_norm");
        check_out("gated_cross_fusion", [&] { return cross_fuse(visual, projected, stage); }, r,
              params);
    }
    {
        Tensor r = random_tensor({sc.skip_dim, 2 * sc.grid, 2 * sc.grid}, rng);
        ParamList params{{"tokens", visual}, {"skip", skip}};
        stage.merge.collect(params, "merge");
        check_out("skip_merge", [&] { return decode_merge(visual, skip, stage.merge); }, r, params);
    }
    {
        Tensor r = random_tensor({sc.skip_dim, 2 * sc.grid, 2 * sc.grid}, rng);
        ParamList params{{"visual", visual}, {"text", text}, {"skip", skip}};
        stage.collect(params, "guide");
        check_out("guide_decoder", [&] { return guide_decoder_forward({visual, text, text_mask, skip}, stage); }, r,
              params);
    }

    // losses are checked w.r.t. probabilities on a small map: a loss is O(1)
    // and its float32 rounding would swamp the gradient of a large mean
    Tensor probs = random_tensor({1, 3, 3}, rng, 0.1f, 0.9f);
    std::vector<float> bits(9);
    for (auto& b : bits) b = rng.bernoulli(0.4f) ? 1.0f : 0.0f;
    Tensor target = Tensor::from_data({1, 3, 3}, bits);
    check("dice_loss", [&] { return dice_loss(probs, target); }, {{"probs", probs}});
    check("bce_loss", [&] { return bce_loss(probs, target); }, {{"probs", probs}});
    check("combined_loss", [&] { return combined_loss(probs, target); }, {{"probs", probs}});

    {
        TextEncoderConfig tc;
        tc.vocab_size = grammar_vocab().size();
        tc.dim = 8;
        tc.heads = 4;
        tc.blocks = 1;
        tc.ffn_dim = 8;
        auto enc = TextEncoder::init(tc, rng);
        const auto prompt = tokenize("unilateral pulmonary infection", grammar_vocab(), 6);
        // padding rows are never read downstream; their layer norm sees a
        // near-constant row and is far too curved for a finite difference
        Tensor r = random_tensor({6, 8}, rng);
        for (std::size_t row = 0; row < prompt.mask.size(); ++row)
            if (!prompt.mask[row])
                for (std::size_t c = 0; c < 8; ++c) r.mutable_data()[row * 8 + c] = 0.0f;
        ParamList params;
        enc.collect(params, "text");
        check_out("text_encoder", [&] { return enc.encode(prompt); }, r, params);
    }
    {
        ModelConfig mc;
        mc.image_side = 8;
        mc.image.stem_stride = 1;
        mc.image.widths = {4, 8, 8, 8};
        mc.text_dim = 8;
        mc.text_heads = 4;
        mc.text_blocks = 1;
        mc.text_ffn = 8;
        mc.text_len = 8;
        mc.reduced_tokens = 2;
        mc.guide_decoders = 1;
        auto model = SegModel::init(mc, grammar_vocab(), rng);
        model.guide_stage(0).alpha.mutable_data()[0] = 0.7f;
        const PromptStages prompt{"unilateral pulmonary infection", "one infected areas", "located at left upper lung"};
        Tensor image = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f);
        Tensor r = random_tensor({1, 8, 8}, rng);
        check_out("model_1stage_8x8", [&] { return model.forward(image, prompt); }, r, model.parameters());
    }
    return out;
}

}  // namespace lgs
