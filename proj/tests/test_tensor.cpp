#include <cmath>
#include <random>

#include "akd/errors.hpp"
#include "akd/tensor.hpp"
#include "doctest.h"

using namespace akd;

namespace {

Tensor randn(const Shape& s, std::uint64_t seed, bool grad = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> v(s.numel());
    for (auto& x : v) x = nd(rng);
    return Tensor(s, std::move(v), grad);
}

// Direct-definition oracles.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t t = 0; t < k; ++t) out[i * m + j] += a[i * k + t] * b[t * m + j];
    return out;
}

std::vector<double> naive_conv(const Tensor& x, const Tensor& w, int pad) {
    const long B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const long O = w.shape()[0], K = w.shape()[2];
    const long Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
    std::vector<double> out(B * O * Ho * Wo, 0.0);
    for (long b = 0; b < B; ++b)
        for (long o = 0; o < O; ++o)
            for (long y = 0; y < Ho; ++y)
                for (long xx = 0; xx < Wo; ++xx) {
                    double s = 0.0;
                    for (long c = 0; c < C; ++c)
                        for (long ky = 0; ky < K; ++ky)
                            for (long kx = 0; kx < K; ++kx) {
                                const long iy = y + ky - pad, ix = xx + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                s += x[((b * C + c) * H + iy) * W + ix] * w[((o * C + c) * K + ky) * K + kx];
                            }
                    out[((b * O + o) * Ho + y) * Wo + xx] = s;
                }
    return out;
}

}  // namespace

TEST_CASE("shape basics") {
    CHECK(Shape{2, 3, 4}.numel() == 24);
    CHECK(Shape{2, 3}.str() == "[2x3]");
    CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
}

TEST_CASE("matmul matches the triple loop") {
    const Tensor a = randn(Shape{3, 5}, 1), b = randn(Shape{5, 4}, 2);
    const Tensor c = matmul(a, b);
    const auto ref = naive_matmul(a, b);
    CHECK(c.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("conv2d matches the direct definition") {
    for (int k : {1, 3})
        for (int pad : {0, 1}) {
            const Tensor x = randn(Shape{2, 3, 5, 4}, 3), w = randn(Shape{4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, 4);
            const Tensor y = conv2d(x, w, 1, pad);
            const auto ref = naive_conv(x, w, pad);
            REQUIRE(y.numel() == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
        }
    const Tensor x = randn(Shape{1, 2, 4, 4}, 5);
    CHECK_THROWS_AS(conv2d(x, randn(Shape{1, 3, 3, 3}, 6), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, randn(Shape{1, 2, 3, 3}, 6), 2, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, randn(Shape{1, 2, 5, 5}, 6), 1, 1), ShapeError);
}

TEST_CASE("gradients agree with central differences") {
    const Tensor x = randn(Shape{2, 3, 4, 4}, 7, true);
    const Tensor w = randn(Shape{2, 3, 3, 3}, 8);
    CHECK(grad_check([&](const Tensor& v) { return sum(square(conv2d(v, w, 1, 1))); }, x) < 1e-6);
    const Tensor wg = randn(Shape{2, 3, 3, 3}, 8, true);
    CHECK(grad_check([&](const Tensor& v) { return sum(square(conv2d(x.detach(), v, 1, 1))); }, wg) < 1e-6);
    CHECK(grad_check([](const Tensor& v) { return sum(mul(softmax(v, {2, 3}), v)); }, x) < 1e-6);
    CHECK(grad_check([](const Tensor& v) { return sum(mul(log_softmax(v, {1}), v)); }, x) < 1e-6);
    CHECK(grad_check([](const Tensor& v) { return sum(square(reduce(v, ReduceKind::var_population, {0, 2, 3}))); }, x) < 1e-6);
    const Tensor a = randn(Shape{3, 4}, 9, true);
    const Tensor b = randn(Shape{4, 2}, 10);
    CHECK(grad_check([&](const Tensor& v) { return sum(exp(scale(matmul(v, b), 0.3))); }, a) < 1e-6);
    const Tensor pos = Tensor(Shape{4}, {0.5, 1.5, 2.0, 3.0}, true);
    CHECK(grad_check([](const Tensor& v) { return sum(div(log(v), add(v, 1.0))); }, pos) < 1e-6);
}

TEST_CASE("broadcasting is right aligned") {
    const Tensor x = randn(Shape{2, 3, 2, 2}, 11, true);
    const Tensor s = Tensor(Shape{3, 1, 1}, {1.0, 2.0, 4.0}, true);
    const Tensor y = div(x, s);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i] / s[(i / 4) % 3]);
    CHECK(broadcast_shape(Shape{2, 3, 4, 5}, Shape{1, 4, 5}) == Shape{2, 3, 4, 5});
    CHECK_THROWS_AS(broadcast_shape(Shape{2, 3}, Shape{4}), ShapeError);
    backward(sum(y));
    // d/ds sum(x / s) = -sum_group(x) / s^2
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i)
            if ((i / 4) % 3 == c) acc += x[i];
        CHECK(s.grad()[c] == doctest::Approx(-acc / (s[c] * s[c])).epsilon(1e-12));
    }
}

TEST_CASE("reductions against two-pass loops") {
    const Tensor x = randn(Shape{4, 3, 2, 2}, 12);
    const Tensor v = reduce(x, ReduceKind::var_population, {0, 2, 3});
    const Tensor mu = mean(x, {0, 2, 3});
    CHECK(v.shape() == Shape{1, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i)
            if ((i / 4) % 3 == c) m += x[i];
        m /= 16.0;
        for (std::size_t i = 0; i < x.numel(); ++i)
            if ((i / 4) % 3 == c) ss += (x[i] - m) * (x[i] - m);
        CHECK(mu[c] == doctest::Approx(m).epsilon(1e-14));
        CHECK(v[c] == doctest::Approx(ss / 16.0).epsilon(1e-13));
    }
    CHECK(sum(x).shape() == Shape{1, 1, 1, 1});
}

TEST_CASE("softmax groups sum to one and match the formula") {
    const Tensor x = randn(Shape{2, 3, 2, 2}, 13);
    const Tensor p = softmax(x, {2, 3});
    for (std::size_t g = 0; g < 6; ++g) {
        double z = 0.0;
        for (std::size_t j = 0; j < 4; ++j) z += std::exp(x[g * 4 + j]);
        for (std::size_t j = 0; j < 4; ++j) CHECK(p[g * 4 + j] == doctest::Approx(std::exp(x[g * 4 + j]) / z).epsilon(1e-14));
    }
    CHECK_THROWS_AS(softmax(x, {}), UsageError);
    CHECK_THROWS_AS(softmax(x, {4}), ShapeError);
}

TEST_CASE("domain and usage errors") {
    CHECK_THROWS_AS(div(Tensor::ones(Shape{2}), Tensor::zeros(Shape{2})), DomainError);
    CHECK_THROWS_AS(log(Tensor(Shape{2}, {1.0, -1.0})), DomainError);
    CHECK_THROWS_AS(exp(Tensor::full(Shape{1}, 1e4)), DomainError);
    const Tensor a = randn(Shape{3}, 14, true);
    const Tensor loss = sum(square(a));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("tape orders shared subgraphs once") {
    const Tensor a = Tensor(Shape{1}, {3.0}, true);
    const Tensor b = mul(a, a);
    const Tensor c = add(b, b);
    Tape tape(c);
    CHECK(tape.nodes().size() == 3);
    tape.backward();
    CHECK(a.grad()[0] == 12.0);
}

TEST_CASE("detached tensors do not record history") {
    const Tensor a = randn(Shape{2}, 15, true);
    const Tensor d = mul(a, a).detach();
    CHECK_FALSE(d.requires_grad());
    const Tensor e = mul(d, d);
    CHECK(e.node().inputs.empty());
}
