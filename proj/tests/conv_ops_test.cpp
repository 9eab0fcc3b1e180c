#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gaitgs/core/conv.hpp"
#include "support/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace gaitgs;
using namespace testsupport;
namespace ops = gaitgs::ops;
using Tape = ad::Tape<double>;
using ops::Dims3;

static ad::Node<double>* const kNoBias = nullptr;

namespace {

// Direct seven-loop 3-D convolution used as the independent oracle.
Tensor<double> conv3d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>* bias, const Dims3& stride, const Dims3& pad) {
    const std::int64_t B = x.dim(0), Ci = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
    const std::int64_t Co = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    const std::int64_t To = (Ti + 2 * pad[0] - kt) / stride[0] + 1;
    const std::int64_t Ho = (Hi + 2 * pad[1] - kh) / stride[1] + 1;
    const std::int64_t Wo = (Wi + 2 * pad[2] - kw) / stride[2] + 1;
    Tensor<double> out({B, Co, To, Ho, Wo});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t to = 0; to < To; ++to)
                for (std::int64_t ho = 0; ho < Ho; ++ho)
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        double acc = bias ? (*bias)[co] : 0.0;
                        for (std::int64_t ci = 0; ci < Ci; ++ci)
                            for (std::int64_t dt = 0; dt < kt; ++dt)
                                for (std::int64_t dh = 0; dh < kh; ++dh)
                                    for (std::int64_t dw = 0; dw < kw; ++dw) {
                                        const std::int64_t ti = to * stride[0] - pad[0] + dt;
                                        const std::int64_t hi = ho * stride[1] - pad[1] + dh;
                                        const std::int64_t wi = wo * stride[2] - pad[2] + dw;
                                        if (ti < 0 || ti >= Ti || hi < 0 || hi >= Hi || wi < 0 ||
                                            wi >= Wi)
                                            continue;
                                        acc += w.at({co, ci, dt, dh, dw}) *
                                               x.at({b, ci, ti, hi, wi});
                                    }
                        out.at({b, co, to, ho, wo}) = acc;
                    }
    return out;
}

}  // namespace

TEST_CASE("conv3d matches the seven-loop oracle", "[conv]") {
    Rng rng = Rng::seeded(31);
    Tensor<double> x = random_tensor({2, 3, 5, 6, 5}, rng);
    Tensor<double> w = random_tensor({4, 3, 3, 3, 3}, rng);
    Tensor<double> bias = random_tensor({4}, rng);

    SECTION("stride 1, same padding") {
        Tape tape;
        auto* y = ops::conv3d_same(tape, tape.leaf_for(&x), tape.leaf_for(&w), tape.leaf_for(&bias));
        Tensor<double> ref = conv3d_oracle(x, w, &bias, {1, 1, 1}, {1, 1, 1});
        REQUIRE(y->value.shape() == ref.shape());
        REQUIRE(max_abs_diff(y->value, ref) < 1e-12);
    }
    SECTION("temporal stride 3, kernel (3,1,1), no padding") {
        Tensor<double> wt = random_tensor({3, 3, 3, 1, 1}, rng);
        Tape tape;
        auto* y = ops::conv3d(tape, tape.leaf_for(&x), tape.leaf_for(&wt), kNoBias, {3, 1, 1},
                              {0, 0, 0});
        Tensor<double> ref = conv3d_oracle(x, wt, nullptr, {3, 1, 1}, {0, 0, 0});
        REQUIRE(y->value.shape() == Shape{2, 3, 1, 6, 5});
        REQUIRE(max_abs_diff(y->value, ref) < 1e-12);
    }
    SECTION("asymmetric kernels (3,1,1) and (1,3,3) with same padding") {
        Tensor<double> w1 = random_tensor({4, 3, 3, 1, 1}, rng);
        Tensor<double> w2 = random_tensor({4, 3, 1, 3, 3}, rng);
        Tape tape;
        auto* y1 = ops::conv3d_same(tape, tape.leaf_for(&x), tape.leaf_for(&w1), kNoBias);
        auto* y2 = ops::conv3d_same(tape, tape.leaf_for(&x), tape.leaf_for(&w2), kNoBias);
        REQUIRE(max_abs_diff(y1->value, conv3d_oracle(x, w1, nullptr, {1, 1, 1}, {1, 0, 0})) < 1e-12);
        REQUIRE(max_abs_diff(y2->value, conv3d_oracle(x, w2, nullptr, {1, 1, 1}, {0, 1, 1})) < 1e-12);
    }
}

TEST_CASE("conv3d gradients match finite differences", "[conv]") {
    Rng rng = Rng::seeded(32);
    Tensor<double> x = random_tensor({1, 2, 4, 4, 3}, rng);
    Tensor<double> w = random_tensor({2, 2, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor<double> bias = random_tensor({2}, rng);
    Tensor<double> wsum = random_tensor({1, 2, 4, 4, 3}, rng);

    auto rep = check_gradients({{"x", &x}, {"w", &w}, {"bias", &bias}}, [&](Tape& t) {
        auto* y = ops::conv3d_same(t, t.leaf_for(&x), t.leaf_for(&w), t.leaf_for(&bias));
        return ops::weighted_sum(t, y, wsum);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("strided conv3d gradients match finite differences", "[conv]") {
    Rng rng = Rng::seeded(33);
    Tensor<double> x = random_tensor({1, 2, 7, 3, 3}, rng);
    Tensor<double> w = random_tensor({2, 2, 3, 1, 1}, rng, -0.5, 0.5);
    Tensor<double> wsum = random_tensor({1, 2, 2, 3, 3}, rng);

    auto rep = check_gradients({{"x", &x}, {"w", &w}}, [&](Tape& t) {
        auto* y = ops::conv3d(t, t.leaf_for(&x), t.leaf_for(&w), kNoBias, {3, 1, 1}, {0, 0, 0});
        return ops::weighted_sum(t, y, wsum);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("conv1d_time matches a naive oracle in both padding modes", "[conv]") {
    Rng rng = Rng::seeded(34);
    Tensor<double> x = random_tensor({2, 2, 5, 3}, rng);
    Tensor<double> w = random_tensor({4, 3, 3}, rng);
    Tensor<double> bias = random_tensor({4}, rng);

    for (auto mode : {ops::PadMode::Zero, ops::PadMode::Replicate}) {
        Tape tape;
        auto* y = ops::conv1d_time(tape, tape.leaf_for(&x), tape.leaf_for(&w),
                                   tape.leaf_for(&bias), mode);
        REQUIRE(y->value.shape() == Shape{2, 2, 5, 4});
        for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t p = 0; p < 2; ++p)
                for (std::int64_t t = 0; t < 5; ++t)
                    for (std::int64_t co = 0; co < 4; ++co) {
                        double acc = bias[co];
                        for (std::int64_t ci = 0; ci < 3; ++ci)
                            for (std::int64_t k = 0; k < 3; ++k) {
                                std::int64_t s = t - 1 + k;
                                if (mode == ops::PadMode::Replicate)
                                    s = std::clamp<std::int64_t>(s, 0, 4);
                                else if (s < 0 || s > 4)
                                    continue;
                                acc += w.at({co, ci, k}) * x.at({b, p, s, ci});
                            }
                        REQUIRE(y->value.at({b, p, t, co}) == Catch::Approx(acc).margin(1e-12));
                    }
    }
}

TEST_CASE("conv1d_time gradients match finite differences", "[conv]") {
    Rng rng = Rng::seeded(35);
    Tensor<double> x = random_tensor({1, 2, 5, 3}, rng);
    Tensor<double> w = random_tensor({2, 3, 3}, rng, -0.5, 0.5);
    Tensor<double> bias = random_tensor({2}, rng);
    Tensor<double> wsum = random_tensor({1, 2, 5, 2}, rng);

    for (auto mode : {ops::PadMode::Zero, ops::PadMode::Replicate}) {
        auto rep = check_gradients({{"x", &x}, {"w", &w}, {"bias", &bias}}, [&](Tape& t) {
            auto* y =
                ops::conv1d_time(t, t.leaf_for(&x), t.leaf_for(&w), t.leaf_for(&bias), mode);
            return ops::weighted_sum(t, y, wsum);
        });
        INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
        REQUIRE(rep.max_rel < kGradTol);
    }
}

TEST_CASE("grouped and shared temporal convolutions match naive oracles", "[conv]") {
    Rng rng = Rng::seeded(36);
    Tensor<double> x = random_tensor({2, 2, 6, 4}, rng);
    Tensor<double> wg = random_tensor({4, 5}, rng);
    Tensor<double> ws = random_tensor({5}, rng);

    Tape tape;
    auto* yg = ops::grouped_conv1d_time(tape, tape.leaf_for(&x), tape.leaf_for(&wg));
    auto* ys = ops::shared_conv1d_time(tape, tape.leaf_for(&x), tape.leaf_for(&ws));
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t p = 0; p < 2; ++p)
            for (std::int64_t t = 0; t < 6; ++t)
                for (std::int64_t c = 0; c < 4; ++c) {
                    double accg = 0, accs = 0;
                    for (std::int64_t k = 0; k < 5; ++k) {
                        const std::int64_t s = t - 2 + k;
                        if (s < 0 || s > 5) continue;
                        accg += wg.at({c, k}) * x.at({b, p, s, c});
                        accs += ws[k] * x.at({b, p, s, c});
                    }
                    REQUIRE(yg->value.at({b, p, t, c}) == Catch::Approx(accg).margin(1e-12));
                    REQUIRE(ys->value.at({b, p, t, c}) == Catch::Approx(accs).margin(1e-12));
                }

    SECTION("zero kernels produce exactly zero output") {
        Tensor<double> zg = Tensor<double>::zeros({4, 5});
        Tape t2;
        auto* y0 = ops::grouped_conv1d_time(t2, t2.leaf_for(&x), t2.leaf_for(&zg));
        for (std::int64_t i = 0; i < y0->value.numel(); ++i) REQUIRE(y0->value[i] == 0.0);
    }
    SECTION("gradcheck") {
        Tensor<double> wsum = random_tensor({2, 2, 6, 4}, rng);
        auto rep = check_gradients({{"x", &x}, {"wg", &wg}, {"ws", &ws}}, [&](Tape& t) {
            auto* a = ops::grouped_conv1d_time(t, t.leaf_for(&x), t.leaf_for(&wg));
            auto* b = ops::shared_conv1d_time(t, t.leaf_for(&x), t.leaf_for(&ws));
            return ops::weighted_sum(t, ops::add(t, a, b), wsum);
        });
        INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
        REQUIRE(rep.max_rel < kGradTol);
    }
}

TEST_CASE("window_max_time matches a clamped sliding-window oracle", "[conv]") {
    Rng rng = Rng::seeded(37);
    Tensor<double> x = distinct_tensor({2, 2, 7, 3}, rng);

    Tape tape;
    auto* y = ops::window_max_time(tape, tape.leaf_for(&x), 3);
    REQUIRE(y->value.shape() == x.shape());
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t p = 0; p < 2; ++p)
            for (std::int64_t t = 0; t < 7; ++t)
                for (std::int64_t c = 0; c < 3; ++c) {
                    double best = -1e30;
                    for (std::int64_t d = -1; d <= 1; ++d) {
                        const std::int64_t s = std::clamp<std::int64_t>(t + d, 0, 6);
                        best = std::max(best, x.at({b, p, s, c}));
                    }
                    REQUIRE(y->value.at({b, p, t, c}) == best);
                }

    Tensor<double> wsum = random_tensor({2, 2, 7, 3}, rng);
    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::window_max_time(t, t.leaf_for(&x), 3), wsum);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("horizontal_pool is max plus mean per strip", "[conv]") {
    Rng rng = Rng::seeded(38);

    SECTION("constant input pools to twice the constant") {
        Tensor<double> x({1, 2, 3, 8, 4}, 0.75);
        Tape tape;
        auto* y = ops::horizontal_pool(tape, tape.leaf_for(&x), 4);
        REQUIRE(y->value.shape() == Shape{1, 4, 3, 2});
        for (std::int64_t i = 0; i < y->value.numel(); ++i)
            REQUIRE(y->value[i] == Catch::Approx(1.5).epsilon(1e-12));
    }
    SECTION("random input matches the naive per-strip loop") {
        Tensor<double> x = distinct_tensor({1, 2, 2, 8, 3}, rng);
        Tape tape;
        auto* y = ops::horizontal_pool(tape, tape.leaf_for(&x), 4);
        for (std::int64_t p = 0; p < 4; ++p)
            for (std::int64_t t = 0; t < 2; ++t)
                for (std::int64_t c = 0; c < 2; ++c) {
                    double best = -1e30, sum = 0;
                    for (std::int64_t h = p * 2; h < (p + 1) * 2; ++h)
                        for (std::int64_t w = 0; w < 3; ++w) {
                            best = std::max(best, x.at({0, c, t, h, w}));
                            sum += x.at({0, c, t, h, w});
                        }
                    REQUIRE(y->value.at({0, p, t, c}) ==
                            Catch::Approx(best + sum / 6.0).margin(1e-12));
                }
    }
    SECTION("height not divisible by part count is rejected") {
        Tensor<double> x({1, 1, 1, 6, 2}, 0.0);
        Tape tape;
        REQUIRE_THROWS_WITH(ops::horizontal_pool(tape, tape.leaf_for(&x), 4),
                            Catch::Matchers::ContainsSubstring("not divisible"));
    }
    SECTION("gradcheck") {
        Tensor<double> x = distinct_tensor({1, 2, 2, 8, 3}, rng);
        Tensor<double> wsum = random_tensor({1, 4, 2, 2}, rng);
        auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
            return ops::weighted_sum(t, ops::horizontal_pool(t, t.leaf_for(&x), 4), wsum);
        });
        INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
        REQUIRE(rep.max_rel < kGradTol);
    }
}

TEST_CASE("maxpool_hw and max_time_bcthw match naive reductions", "[conv]") {
    Rng rng = Rng::seeded(39);
    Tensor<double> x = distinct_tensor({1, 2, 3, 4, 6}, rng);

    Tape tape;
    auto* yp = ops::maxpool_hw(tape, tape.leaf_for(&x));
    REQUIRE(yp->value.shape() == Shape{1, 2, 3, 2, 3});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t t = 0; t < 3; ++t)
            for (std::int64_t h = 0; h < 2; ++h)
                for (std::int64_t w = 0; w < 3; ++w) {
                    double best = -1e30;
                    for (std::int64_t dh = 0; dh < 2; ++dh)
                        for (std::int64_t dw = 0; dw < 2; ++dw)
                            best = std::max(best, x.at({0, c, t, 2 * h + dh, 2 * w + dw}));
                    REQUIRE(yp->value.at({0, c, t, h, w}) == best);
                }

    auto* ym = ops::max_time_bcthw(tape, tape.leaf_for(&x));
    REQUIRE(ym->value.shape() == Shape{1, 2, 4, 6});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t h = 0; h < 4; ++h)
            for (std::int64_t w = 0; w < 6; ++w) {
                double best = -1e30;
                for (std::int64_t t = 0; t < 3; ++t)
                    best = std::max(best, x.at({0, c, t, h, w}));
                REQUIRE(ym->value.at({0, c, h, w}) == best);
            }

    Tensor<double> w1 = random_tensor({1, 2, 3, 2, 3}, rng);
    Tensor<double> w2 = random_tensor({1, 2, 4, 6}, rng);
    auto rep1 = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::maxpool_hw(t, t.leaf_for(&x)), w1);
    });
    REQUIRE(rep1.max_rel < kGradTol);
    auto rep2 = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::max_time_bcthw(t, t.leaf_for(&x)), w2);
    });
    REQUIRE(rep2.max_rel < kGradTol);
}

TEST_CASE("gem_pool limits: p=1 is the mean, large p approaches the max", "[conv]") {
    Rng rng = Rng::seeded(40);
    Tensor<double> x = random_tensor({2, 3, 4, 5}, rng, 0.1, 1.0);  // nonnegative

    SECTION("p = 1 equals plain spatial mean") {
        Tensor<double> p = Tensor<double>::scalar(1.0);
        Tape tape;
        auto* y = ops::gem_pool(tape, tape.leaf_for(&x), tape.leaf_for(&p));
        REQUIRE(y->value.shape() == Shape{2, 3});
        for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t c = 0; c < 3; ++c) {
                double mean = 0;
                for (std::int64_t h = 0; h < 4; ++h)
                    for (std::int64_t w = 0; w < 5; ++w) mean += x.at({b, c, h, w});
                mean /= 20.0;
                REQUIRE(y->value.at({b, c}) == Catch::Approx(mean).epsilon(1e-12));
            }
    }
    SECTION("p = 32 lies within 5% of the spatial max") {
        // On an n-cell grid the pooled value is at least max * (1/n)^(1/p);
        // a 2x2 grid gives (1/4)^(1/32) ~ 0.958, so 5% holds for any input.
        Rng rng2 = Rng::seeded(41);
        Tensor<double> xs = random_tensor({2, 3, 2, 2}, rng2, 0.1, 1.0);
        Tensor<double> p = Tensor<double>::scalar(32.0);
        Tape tape;
        auto* y = ops::gem_pool(tape, tape.leaf_for(&xs), tape.leaf_for(&p));
        for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t c = 0; c < 3; ++c) {
                double mx = 0;
                for (std::int64_t h = 0; h < 2; ++h)
                    for (std::int64_t w = 0; w < 2; ++w) mx = std::max(mx, xs.at({b, c, h, w}));
                REQUIRE(std::abs(y->value.at({b, c}) - mx) / mx < 0.05);
            }
    }
    SECTION("extreme p does not overflow in the factored form") {
        Tensor<double> p = Tensor<double>::scalar(64.0);
        Tensor<double> big({1, 1, 2, 2}, 0.0);
        big[0] = 1e30;
        big[1] = 1e29;
        big[2] = 1e28;
        big[3] = 1e27;
        Tape tape;
        auto* y = ops::gem_pool(tape, tape.leaf_for(&big), tape.leaf_for(&p));
        REQUIRE(std::isfinite(y->value.item()));
        REQUIRE(y->value.item() > 0.0);
    }
    SECTION("all-zero slice pools to zero") {
        Tensor<double> p = Tensor<double>::scalar(3.0);
        Tensor<double> z = Tensor<double>::zeros({1, 1, 3, 3});
        Tape tape;
        auto* y = ops::gem_pool(tape, tape.leaf_for(&z), tape.leaf_for(&p));
        REQUIRE(y->value.item() == 0.0);
    }
    SECTION("gradcheck over x and p, signed input") {
        Tensor<double> xs = random_tensor_nonzero({1, 2, 3, 3}, rng, 0.1, 1.0);
        Tensor<double> p = Tensor<double>::scalar(2.5);
        Tensor<double> wsum = random_tensor({1, 2}, rng);
        auto rep = check_gradients({{"x", &xs}, {"p", &p}}, [&](Tape& t) {
            auto* y = ops::gem_pool(t, t.leaf_for(&xs), t.leaf_for(&p));
            return ops::weighted_sum(t, y, wsum);
        });
        INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
        REQUIRE(rep.max_rel < kGradTol);
    }
}
