#include <doctest.h>

#include <algorithm>

#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/gradcheck.hpp"
#include "lgs/ops.hpp"
#include "lgs/rng.hpp"

using namespace lgs;

namespace {

Tensor rand_t(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(static_cast<std::size_t>(numel(s)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(s), std::move(v));
}

// direct sliding window, zero padding
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out;
    for (std::int64_t o = 0; o < cout; ++o)
        for (std::int64_t r = 0; r < oh; ++r)
            for (std::int64_t c = 0; c < ow; ++c) {
                double acc = b.defined() ? b.data()[static_cast<std::size_t>(o)] : 0.0;
                for (std::int64_t i = 0; i < cin; ++i)
                    for (std::int64_t u = 0; u < kh; ++u)
                        for (std::int64_t v = 0; v < kw; ++v) {
                            const auto rr = r * stride + u - pad, cc = c * stride + v - pad;
                            if (rr < 0 || rr >= h || cc < 0 || cc >= wd) continue;
                            acc += static_cast<double>(x.at({i, rr, cc})) * w.at({o, i, u, v});
                        }
                out.push_back(acc);
            }
    return out;
}

}  // namespace

TEST_CASE("matmul: identity, 1x1 and triple loop oracle") {
    Rng rng(1);
    auto A = rand_t({3, 4}, rng);
    std::vector<float> eye(16, 0.0f);
    for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i * 5)] = 1.0f;
    auto I = Tensor::from_data({4, 4}, eye);
    auto AI = matmul(A, I);
    for (std::size_t i = 0; i < 12; ++i) CHECK(AI.data()[i] == A.data()[i]);

    CHECK(matmul(Tensor::from_data({1, 1}, {2}), Tensor::from_data({1, 1}, {3})).item() == 6.0f);

    auto B = rand_t({4, 2}, rng);
    auto C = matmul(A, B);
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j) {
            double acc = 0;
            for (std::int64_t k = 0; k < 4; ++k) acc += static_cast<double>(A.at({i, k})) * B.at({k, j});
            CHECK(C.at({i, j}) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("conv2d: 1x1 equals per-pixel channel matmul") {
    Rng rng(2);
    auto x = rand_t({3, 4, 5}, rng);
    auto w = rand_t({2, 3, 1, 1}, rng);
    auto y = conv2d(x, w, Tensor(), 1, 0);
    REQUIRE(y.shape() == Shape{2, 4, 5});
    for (std::int64_t o = 0; o < 2; ++o)
        for (std::int64_t r = 0; r < 4; ++r)
            for (std::int64_t c = 0; c < 5; ++c) {
                double acc = 0;
                for (std::int64_t i = 0; i < 3; ++i) acc += static_cast<double>(w.at({o, i, 0, 0})) * x.at({i, r, c});
                CHECK(y.at({o, r, c}) == doctest::Approx(acc).epsilon(1e-6));
            }
}

TEST_CASE("conv2d: identity kernel reproduces input") {
    Rng rng(3);
    auto x = rand_t({1, 5, 5}, rng);
    std::vector<float> k(9, 0.0f);
    k[4] = 1.0f;
    auto y = conv2d(x, Tensor::from_data({1, 1, 3, 3}, k), Tensor(), 1, 1);
    for (std::size_t i = 0; i < 25; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches sliding-window oracle across strides and padding") {
    Rng rng(4);
    struct Case { Shape x, w; int stride, pad; };
    for (const auto& cs : {Case{{1, 4, 4}, {1, 1, 2, 2}, 1, 0}, Case{{2, 5, 6}, {3, 2, 3, 3}, 2, 1},
                           Case{{3, 8, 8}, {4, 3, 2, 2}, 2, 0}, Case{{2, 3, 3}, {2, 2, 3, 3}, 1, 1}}) {
        auto x = rand_t(cs.x, rng);
        auto w = rand_t(cs.w, rng);
        auto b = rand_t({cs.w[0]}, rng);
        auto y = conv2d(x, w, b, cs.stride, cs.pad);
        const auto expect = conv_oracle(x, w, b, cs.stride, cs.pad);
        const auto oh = (cs.x[1] + 2 * cs.pad - cs.w[2]) / cs.stride + 1;
        CHECK(y.shape() == Shape{cs.w[0], oh, (cs.x[2] + 2 * cs.pad - cs.w[3]) / cs.stride + 1});
        REQUIRE(static_cast<std::size_t>(y.numel()) == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-5));
    }
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 1, 0), DimensionError);
    CHECK_NOTHROW(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 1, 1));
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 1, 1), DimensionError);
}

TEST_CASE("softmax: normalisation, symmetry and shift invariance") {
    Rng rng(5);
    auto x = rand_t({6, 7}, rng, -5, 5);
    auto y = softmax(x, 1);
    for (std::int64_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::int64_t c = 0; c < 7; ++c) {
            CHECK(y.at({r, c}) > 0.0f);
            s += y.at({r, c});
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    auto flat = softmax(Tensor::full({1, 4}, 3.0f), 1);
    for (float v : flat.data()) CHECK(v == 0.25f);

    auto shifted = softmax(add_scalar(x, 10.0f), 1);
    for (std::size_t i = 0; i < 42; ++i) CHECK(std::abs(shifted.data()[i] - y.data()[i]) < 1e-6);

    auto cols = softmax(x, 0);
    double s0 = 0;
    for (std::int64_t r = 0; r < 6; ++r) s0 += cols.at({r, 0});
    CHECK(std::abs(s0 - 1.0) < 1e-6);
    CHECK_THROWS_AS(softmax(x, 2), IndexError);
}

TEST_CASE("masked softmax zeroes masked keys and rejects all-masked rows") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto y = masked_softmax(x, {true, false, true});
    CHECK(y.at({0, 1}) == 0.0f);
    CHECK(y.at({0, 0}) + y.at({0, 2}) == doctest::Approx(1.0f));
    CHECK_THROWS_AS(masked_softmax(x, {false, false, false}), ContractError);
}

TEST_CASE("layer_norm: moments, constant rows and formula oracle") {
    Rng rng(6);
    auto x = rand_t({5, 9}, rng, -3, 3);
    auto ones = Tensor::full({9}, 1.0f), zeros = Tensor::zeros({9});
    auto y = layer_norm(x, ones, zeros, 1e-5f);
    for (std::int64_t r = 0; r < 5; ++r) {
        double m = 0, v = 0, mx = 0, vx = 0;
        for (std::int64_t c = 0; c < 9; ++c) m += y.at({r, c}), mx += x.at({r, c});
        m /= 9, mx /= 9;
        for (std::int64_t c = 0; c < 9; ++c) {
            v += (y.at({r, c}) - m) * (y.at({r, c}) - m);
            vx += (x.at({r, c}) - mx) * (x.at({r, c}) - mx);
        }
        v /= 9, vx /= 9;
        CHECK(std::abs(m) < 1e-5);
        CHECK(std::abs(v - vx / (vx + 1e-5)) < 1e-5);
        for (std::int64_t c = 0; c < 9; ++c) {
            const double expect = (x.at({r, c}) - mx) / std::sqrt(vx + 1e-5);
            CHECK(std::abs(y.at({r, c}) - expect) < 1e-6 * std::max(1.0, std::abs(expect)));
        }
    }
    auto flat = layer_norm(Tensor::full({2, 4}, 7.0f), Tensor::full({4}, 1.0f), Tensor::zeros({4}));
    for (float v : flat.data()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(layer_norm(x, Tensor::full({8}, 1.0f), Tensor::zeros({8})), DimensionError);
}

TEST_CASE("upsample replicates and its gradient sums blocks") {
    auto one = upsample_nearest2x(Tensor::from_data({1, 1, 1}, {2.5f}));
    CHECK(one.shape() == Shape{1, 2, 2});
    for (float v : one.data()) CHECK(v == 2.5f);

    Rng rng(7);
    auto x = rand_t({2, 3, 4}, rng);
    x.set_requires_grad(true);
    auto y = upsample_nearest2x(x);
    CHECK(y.shape() == Shape{2, 6, 8});
    CHECK(y.at({1, 5, 7}) == x.at({1, 2, 3}));
    backward(sum(y));
    for (float g : x.grad()) CHECK(g == 4.0f);
    x.set_requires_grad(false);
    auto report = grad_check([&] { return sum(upsample_nearest2x(x)); }, {{"x", x}});
    CHECK(report.passed);
}

TEST_CASE("pixel shuffle places channel c*r*r + i*r + j at block offset (i, j)") {
    Rng rng(12);
    auto x = rand_t({8, 2, 3}, rng);
    auto y = pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape{2, 4, 6});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 2; ++i)
            for (std::int64_t j = 0; j < 2; ++j)
                for (std::int64_t h = 0; h < 2; ++h)
                    for (std::int64_t w = 0; w < 3; ++w) CHECK(y.at({c, 2 * h + i, 2 * w + j}) == x.at({c * 4 + i * 2 + j, h, w}));
    // bijection: every input value appears once
    auto sorted_in = std::vector<float>(x.data().begin(), x.data().end());
    auto sorted_out = std::vector<float>(y.data().begin(), y.data().end());
    std::sort(sorted_in.begin(), sorted_in.end());
    std::sort(sorted_out.begin(), sorted_out.end());
    CHECK(sorted_in == sorted_out);
    auto same = pixel_shuffle(x, 1);
    for (std::size_t k = 0; k < 48; ++k) CHECK(same.data()[k] == x.data()[k]);
    CHECK_THROWS_AS(pixel_shuffle(rand_t({6, 2, 2}, rng), 2), DimensionError);
}

TEST_CASE("reshape, transpose, concat and slice round trip") {
    Rng rng(8);
    auto x = rand_t({2, 3, 4}, rng);
    auto r = reshape(x, {6, 4});
    CHECK(r.shape() == Shape{6, 4});
    CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
    auto t = transpose(r);
    CHECK(t.at({3, 5}) == r.at({5, 3}));
    auto a = slice(x, 0, 0, 1), b = slice(x, 0, 1, 1);
    auto joined = concat({a, b}, 0);
    for (std::size_t i = 0; i < 24; ++i) CHECK(joined.data()[i] == x.data()[i]);
    auto cols = concat({slice(x, 2, 0, 2), slice(x, 2, 2, 2)}, 2);
    for (std::size_t i = 0; i < 24; ++i) CHECK(cols.data()[i] == x.data()[i]);
    CHECK_THROWS_AS(slice(x, 1, 2, 2), IndexError);
}

TEST_CASE("embedding gathers rows and scatters gradients") {
    auto table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
    auto e = embedding(table, {2, 0, 2});
    CHECK(e.at({0, 1}) == 21.0f);
    CHECK(e.at({1, 0}) == 0.0f);
    CHECK_THROWS_AS(embedding(table, {3}), IndexError);
    table.set_requires_grad(true);
    backward(sum(embedding(table, {2, 0, 2})));
    CHECK(table.grad()[4] == 2.0f);
    CHECK(table.grad()[2] == 0.0f);
}

TEST_CASE("every differentiable op passes finite differences on small shapes") {
    Rng rng(9);
    auto a = rand_t({3, 4}, rng), b = rand_t({4, 5}, rng), c = rand_t({3, 4}, rng);
    auto v = rand_t({4}, rng), g = rand_t({4}, rng, 0.5f, 1.5f), s = rand_t({1}, rng);
    auto x = rand_t({2, 4, 4}, rng), w = rand_t({3, 2, 3, 3}, rng), bias = rand_t({3}, rng);
    auto r12 = rand_t({3, 4}, rng), r35 = rand_t({3, 5}, rng), rconv = rand_t({3, 4, 4}, rng);
    auto dot = [](const Tensor& t, const Tensor& r) { return sum(mul(t, r)); };

    struct Case {
        const char* name;
        std::function<Tensor()> f;
        std::vector<NamedTensor> params;
    };
    const std::vector<Case> cases = {
        {"matmul", [&] { return dot(matmul(a, b), r35); }, {{"a", a}, {"b", b}}},
        {"transpose", [&] { return dot(transpose(transpose(a)), r12); }, {{"a", a}}},
        {"add_sub_mul", [&] { return dot(mul(add(a, c), sub(a, c)), r12); }, {{"a", a}, {"c", c}}},
        {"scalars", [&] { return dot(mul_scalar(add_scalar(scale(a, 1.5f), 0.3f), s), r12); }, {{"a", a}, {"s", s}}},
        {"add_rowvec", [&] { return dot(add_rowvec(a, v), r12); }, {{"a", a}, {"v", v}}},
        {"sigmoid", [&] { return dot(sigmoid(a), r12); }, {{"a", a}}},
        {"relu", [&] { return dot(relu(a), r12); }, {{"a", a}}},
        {"mean", [&] { return mean(mul(a, a)); }, {{"a", a}}},
        {"softmax", [&] { return dot(softmax(a, 1), r12); }, {{"a", a}}},
        {"softmax_axis0", [&] { return dot(softmax(a, 0), r12); }, {{"a", a}}},
        {"masked_softmax", [&] { return dot(masked_softmax(a, {true, false, true, true}), r12); }, {{"a", a}}},
        {"layer_norm", [&] { return dot(layer_norm(a, g, v), r12); }, {{"a", a}, {"g", g}, {"v", v}}},
        {"conv2d", [&] { return dot(conv2d(x, w, bias, 1, 1), rconv); }, {{"x", x}, {"w", w}, {"bias", bias}}},
        {"concat_slice", [&] { return dot(concat({slice(a, 1, 2, 2), slice(a, 1, 0, 2)}, 1), r12); }, {{"a", a}}},
        {"reshape", [&] { return dot(reshape(a, {4, 3}), reshape(r12, {4, 3})); }, {{"a", a}}},
        {"pixel_shuffle", [&] { return dot(pixel_shuffle(reshape(a, {4, 1, 3}), 2), reshape(r12, {1, 2, 6})); }, {{"a", a}}},
    };
    for (const auto& cs : cases) {
        CAPTURE(cs.name);
        auto report = grad_check(cs.f, cs.params);
        CHECK(report.passed);
    }
}
