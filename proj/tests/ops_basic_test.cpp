#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gaitgs/core/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace gaitgs;
using namespace testsupport;
namespace ops = gaitgs::ops;
using Tape = ad::Tape<double>;
using NodeD = ad::Node<double>;

TEST_CASE("add and mul match elementwise arithmetic and pass gradcheck", "[ops]") {
    Rng rng = Rng::seeded(11);
    Tensor<double> a = random_tensor({3, 4}, rng);
    Tensor<double> b = random_tensor({3, 4}, rng);
    Tensor<double> w = random_tensor({3, 4}, rng);

    Tape tape;
    auto* sum = ops::add(tape, tape.leaf_for(&a), tape.leaf_for(&b));
    auto* prod = ops::mul(tape, tape.leaf_for(&a), tape.leaf_for(&b));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        REQUIRE(sum->value[i] == a[i] + b[i]);
        REQUIRE(prod->value[i] == a[i] * b[i]);
    }

    auto rep = check_gradients({{"a", &a}, {"b", &b}}, [&](Tape& t) {
        auto* y = ops::mul(t, ops::add(t, t.leaf_for(&a), t.leaf_for(&b)), t.leaf_for(&a));
        return ops::weighted_sum(t, y, w);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("scale, leaky_relu and logistic forwards and gradients", "[ops]") {
    Rng rng = Rng::seeded(12);
    Tensor<double> x = random_tensor_nonzero({4, 5}, rng, 0.05, 1.0);
    Tensor<double> w = random_tensor({4, 5}, rng);

    Tape tape;
    auto* xs = ops::scale(tape, tape.leaf_for(&x), 2.5);
    auto* xr = ops::leaky_relu(tape, tape.leaf_for(&x), 0.01);
    auto* xl = ops::logistic(tape, tape.leaf_for(&x));
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        REQUIRE(xs->value[i] == 2.5 * x[i]);
        REQUIRE(xr->value[i] == (x[i] < 0 ? 0.01 * x[i] : x[i]));
        REQUIRE(xl->value[i] == Catch::Approx(1.0 / (1.0 + std::exp(-x[i]))).epsilon(1e-12));
    }

    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        auto* y = ops::logistic(t, ops::leaky_relu(t, ops::scale(t, t.leaf_for(&x), 1.7), 0.01));
        return ops::weighted_sum(t, y, w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("permute matches naive index remap and is gradient-exact", "[ops]") {
    Rng rng = Rng::seeded(13);
    Tensor<double> x = random_tensor({2, 3, 4, 5}, rng);
    Tensor<double> w = random_tensor({4, 2, 5, 3}, rng);

    Tape tape;
    auto* y = ops::permute(tape, tape.leaf_for(&x), {2, 0, 3, 1});
    REQUIRE(y->value.shape() == Shape{4, 2, 5, 3});
    for (std::int64_t a = 0; a < 2; ++a)
        for (std::int64_t b = 0; b < 3; ++b)
            for (std::int64_t c = 0; c < 4; ++c)
                for (std::int64_t d = 0; d < 5; ++d)
                    REQUIRE(y->value.at({c, a, d, b}) == x.at({a, b, c, d}));

    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::permute(t, t.leaf_for(&x), {2, 0, 3, 1}), w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("concat and slice are mutually inverse and gradient-exact", "[ops]") {
    Rng rng = Rng::seeded(14);
    Tensor<double> a = random_tensor({2, 3, 4}, rng);
    Tensor<double> b = random_tensor({2, 2, 4}, rng);
    Tensor<double> w = random_tensor({2, 5, 4}, rng);

    Tape tape;
    auto* cat = ops::concat(tape, {tape.leaf_for(&a), tape.leaf_for(&b)}, 1);
    REQUIRE(cat->value.shape() == Shape{2, 5, 4});
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 4; ++j) {
            for (std::int64_t k = 0; k < 3; ++k)
                REQUIRE(cat->value.at({i, k, j}) == a.at({i, k, j}));
            for (std::int64_t k = 0; k < 2; ++k)
                REQUIRE(cat->value.at({i, 3 + k, j}) == b.at({i, k, j}));
        }
    auto* back = ops::slice(tape, cat, 1, 3, 2);
    REQUIRE(max_abs_diff(back->value, b) == 0.0);

    auto rep = check_gradients({{"a", &a}, {"b", &b}}, [&](Tape& t) {
        auto* c = ops::concat(t, {t.leaf_for(&a), t.leaf_for(&b)}, 1);
        return ops::weighted_sum(t, c, w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("linear matches naive loops and passes gradcheck", "[ops]") {
    Rng rng = Rng::seeded(15);
    Tensor<double> x = random_tensor({3, 2, 4}, rng);
    Tensor<double> wgt = random_tensor({5, 4}, rng);
    Tensor<double> bias = random_tensor({5}, rng);
    Tensor<double> w = random_tensor({3, 2, 5}, rng);

    Tape tape;
    auto* y = ops::linear(tape, tape.leaf_for(&x), tape.leaf_for(&wgt), tape.leaf_for(&bias));
    REQUIRE(y->value.shape() == Shape{3, 2, 5});
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            for (std::int64_t n = 0; n < 5; ++n) {
                double ref = bias[n];
                for (std::int64_t k = 0; k < 4; ++k) ref += x.at({i, j, k}) * wgt.at({n, k});
                REQUIRE(y->value.at({i, j, n}) == Catch::Approx(ref).margin(1e-12));
            }

    auto rep = check_gradients({{"x", &x}, {"w", &wgt}, {"b", &bias}}, [&](Tape& t) {
        auto* out = ops::linear(t, t.leaf_for(&x), t.leaf_for(&wgt), t.leaf_for(&bias));
        return ops::weighted_sum(t, out, w);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("bmm matches naive loops in both modes and passes gradcheck", "[ops]") {
    Rng rng = Rng::seeded(16);
    Tensor<double> a = random_tensor({2, 3, 4}, rng);
    Tensor<double> b = random_tensor({2, 4, 5}, rng);
    Tensor<double> bt = random_tensor({2, 5, 4}, rng);
    Tensor<double> w = random_tensor({2, 3, 5}, rng);

    Tape tape;
    auto* y = ops::bmm(tape, tape.leaf_for(&a), tape.leaf_for(&b), false);
    auto* yt = ops::bmm(tape, tape.leaf_for(&a), tape.leaf_for(&bt), true);
    for (std::int64_t s = 0; s < 2; ++s)
        for (std::int64_t i = 0; i < 3; ++i)
            for (std::int64_t j = 0; j < 5; ++j) {
                double r1 = 0, r2 = 0;
                for (std::int64_t k = 0; k < 4; ++k) {
                    r1 += a.at({s, i, k}) * b.at({s, k, j});
                    r2 += a.at({s, i, k}) * bt.at({s, j, k});
                }
                REQUIRE(y->value.at({s, i, j}) == Catch::Approx(r1).margin(1e-12));
                REQUIRE(yt->value.at({s, i, j}) == Catch::Approx(r2).margin(1e-12));
            }

    auto rep = check_gradients({{"a", &a}, {"b", &b}, {"bt", &bt}}, [&](Tape& t) {
        auto* y1 = ops::bmm(t, t.leaf_for(&a), t.leaf_for(&b), false);
        auto* y2 = ops::bmm(t, t.leaf_for(&a), t.leaf_for(&bt), true);
        return ops::weighted_sum(t, ops::add(t, y1, y2), w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("softmax rows are simplex points and gradients check out", "[ops]") {
    Rng rng = Rng::seeded(17);
    Tensor<double> x = random_tensor({4, 6}, rng, -3.0, 3.0);
    Tensor<double> w = random_tensor({4, 6}, rng);

    Tape tape;
    auto* y = ops::softmax_lastdim(tape, tape.leaf_for(&x));
    for (std::int64_t r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 6; ++c) {
            REQUIRE(y->value.at({r, c}) > 0.0);
            sum += y->value.at({r, c});
        }
        REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
    }
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 6; ++c) {
            double denom = 0.0;
            for (std::int64_t j = 0; j < 6; ++j) denom += std::exp(x.at({r, j}) - x.at({r, c}));
            REQUIRE(y->value.at({r, c}) == Catch::Approx(1.0 / denom).epsilon(1e-10));
        }

    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::softmax_lastdim(t, t.leaf_for(&x)), w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("layer_norm normalizes rows and passes gradcheck", "[ops]") {
    Rng rng = Rng::seeded(18);
    Tensor<double> x = random_tensor({3, 8}, rng);
    Tensor<double> gamma = random_tensor({8}, rng, 0.5, 1.5);
    Tensor<double> beta = random_tensor({8}, rng);
    Tensor<double> w = random_tensor({3, 8}, rng);

    Tape tape;
    Tensor<double> ones({8}, 1.0), zeros({8}, 0.0);
    auto* y = ops::layer_norm_lastdim(tape, tape.leaf_for(&x), tape.leaf_for(&ones),
                                      tape.leaf_for(&zeros), 1e-6);
    for (std::int64_t r = 0; r < 3; ++r) {
        double mu = 0, var = 0;
        for (std::int64_t c = 0; c < 8; ++c) mu += y->value.at({r, c});
        mu /= 8;
        for (std::int64_t c = 0; c < 8; ++c) {
            double d = y->value.at({r, c}) - mu;
            var += d * d;
        }
        REQUIRE(mu == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(var / 8 == Catch::Approx(1.0).epsilon(1e-4));
    }

    auto rep = check_gradients({{"x", &x}, {"gamma", &gamma}, {"beta", &beta}}, [&](Tape& t) {
        auto* out = ops::layer_norm_lastdim(t, t.leaf_for(&x), t.leaf_for(&gamma),
                                            t.leaf_for(&beta), 1e-6);
        return ops::weighted_sum(t, out, w);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("append_token, add_vector_bpc and max_over_time", "[ops]") {
    Rng rng = Rng::seeded(19);
    Tensor<double> x = distinct_tensor({2, 3, 4, 5}, rng);
    Tensor<double> token = random_tensor({5}, rng);
    Tensor<double> e = random_tensor({2, 5}, rng);
    Tensor<double> w1 = random_tensor({2, 3, 5, 5}, rng);
    Tensor<double> w2 = random_tensor({2, 3, 5}, rng);

    Tape tape;
    auto* app = ops::append_token(tape, tape.leaf_for(&x), tape.leaf_for(&token));
    REQUIRE(app->value.shape() == Shape{2, 3, 5, 5});
    for (std::int64_t c = 0; c < 5; ++c) {
        REQUIRE(app->value.at({1, 2, 4, c}) == token[c]);
        REQUIRE(app->value.at({0, 1, 2, c}) == x.at({0, 1, 2, c}));
    }
    auto* mx = ops::max_over_time(tape, tape.leaf_for(&x));
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t p = 0; p < 3; ++p)
            for (std::int64_t c = 0; c < 5; ++c) {
                double best = x.at({b, p, 0, c});
                for (std::int64_t t = 1; t < 4; ++t) best = std::max(best, x.at({b, p, t, c}));
                REQUIRE(mx->value.at({b, p, c}) == best);
            }

    auto rep = check_gradients({{"x", &x}, {"token", &token}, {"e", &e}}, [&](Tape& t) {
        auto* a = ops::append_token(t, t.leaf_for(&x), t.leaf_for(&token));
        auto* s = ops::add_vector_bpc(t, a, t.leaf_for(&e));
        auto* m = ops::max_over_time(t, s);
        return ops::weighted_sum(t, m, w2);
    });
    INFO(rep.worst << " analytic " << rep.analytic << " fd " << rep.fd);
    REQUIRE(rep.max_rel < kGradTol);
    (void)w1;
}

TEST_CASE("embedding_select picks rows and scatters gradient", "[ops]") {
    Rng rng = Rng::seeded(20);
    Tensor<double> table = random_tensor({4, 3}, rng);
    Tensor<double> w = random_tensor({5, 3}, rng);
    std::vector<std::int64_t> idx{0, 2, 2, 3, 1};

    Tape tape;
    auto* y = ops::embedding_select(tape, tape.leaf_for(&table), idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::int64_t c = 0; c < 3; ++c)
            REQUIRE(y->value.at({static_cast<std::int64_t>(i), c}) == table.at({idx[i], c}));

    auto rep = check_gradients({{"table", &table}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::embedding_select(t, t.leaf_for(&table), idx), w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("cross_entropy_mean closed forms and gradient", "[ops]") {
    Rng rng = Rng::seeded(21);
    std::vector<std::int64_t> labels{1, 0, 2};

    SECTION("uniform logits give ln M") {
        Tensor<double> logits({3, 3}, 0.7);
        Tape tape;
        auto* ce = ops::cross_entropy_mean(tape, tape.leaf_for(&logits), labels);
        REQUIRE(ce->value.item() == Catch::Approx(std::log(3.0)).epsilon(1e-12));
    }
    SECTION("extreme correct logits give about zero") {
        Tensor<double> logits = Tensor<double>::zeros({3, 3});
        for (std::int64_t i = 0; i < 3; ++i) logits.at({i, labels[static_cast<std::size_t>(i)]}) = 50.0;
        Tape tape;
        auto* ce = ops::cross_entropy_mean(tape, tape.leaf_for(&logits), labels);
        REQUIRE(ce->value.item() < 1e-12);
    }
    SECTION("random logits match a log-sum-exp oracle and gradcheck") {
        Tensor<double> logits = random_tensor({3, 4}, rng, -2.0, 2.0);
        std::vector<std::int64_t> labs{3, 1, 0};
        double ref = 0.0;
        for (std::int64_t i = 0; i < 3; ++i) {
            double lse = 0.0;
            for (std::int64_t j = 0; j < 4; ++j) lse += std::exp(logits.at({i, j}));
            ref += std::log(lse) - logits.at({i, labs[static_cast<std::size_t>(i)]});
        }
        ref /= 3.0;
        Tape tape;
        auto* ce = ops::cross_entropy_mean(tape, tape.leaf_for(&logits), labs);
        REQUIRE(ce->value.item() == Catch::Approx(ref).epsilon(1e-8));

        auto rep = check_gradients({{"logits", &logits}}, [&](Tape& t) {
            return ops::cross_entropy_mean(t, t.leaf_for(&logits), labs);
        });
        REQUIRE(rep.max_rel < kGradTol);
    }
}

TEST_CASE("separate_fc applies an independent map per part", "[ops]") {
    Rng rng = Rng::seeded(22);
    Tensor<double> x = random_tensor({2, 3, 4}, rng);
    Tensor<double> wgt = random_tensor({3, 5, 4}, rng);
    Tensor<double> bias = random_tensor({3, 5}, rng);
    Tensor<double> w = random_tensor({2, 3, 5}, rng);

    Tape tape;
    auto* y = ops::separate_fc(tape, tape.leaf_for(&x), tape.leaf_for(&wgt), tape.leaf_for(&bias));
    REQUIRE(y->value.shape() == Shape{2, 3, 5});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t p = 0; p < 3; ++p)
            for (std::int64_t o = 0; o < 5; ++o) {
                double ref = bias.at({p, o});
                for (std::int64_t c = 0; c < 4; ++c) ref += x.at({b, p, c}) * wgt.at({p, o, c});
                REQUIRE(y->value.at({b, p, o}) == Catch::Approx(ref).margin(1e-12));
            }

    auto rep = check_gradients({{"x", &x}, {"w", &wgt}, {"bias", &bias}}, [&](Tape& t) {
        auto* out = ops::separate_fc(t, t.leaf_for(&x), t.leaf_for(&wgt), t.leaf_for(&bias));
        return ops::weighted_sum(t, out, w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}

TEST_CASE("shared-weight reuse accumulates gradient once per use", "[ops][autodiff]") {
    // The same parameter read twice through leaf_for must collect the sum of
    // both branches' gradients — this is what makes STEM weight sharing work.
    Rng rng = Rng::seeded(23);
    Tensor<double> x = random_tensor({3, 3}, rng);
    Tensor<double> w = random_tensor({3, 3}, rng);

    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        auto* leaf = t.leaf_for(&x);
        auto* y = ops::mul(t, leaf, leaf);  // x*x, d/dx = 2x
        return ops::weighted_sum(t, y, w);
    });
    REQUIRE(rep.max_rel < kGradTol);

    Tape tape;
    auto* leaf = tape.leaf_for(&x);
    auto* y = ops::mul(tape, leaf, leaf);
    tape.backward(ops::weighted_sum(tape, y, w));
    for (std::int64_t i = 0; i < x.numel(); ++i)
        REQUIRE(leaf->grad[i] == Catch::Approx(2.0 * x[i] * w[i]).epsilon(1e-12));
}

TEST_CASE("reshape keeps data and routes gradient through", "[ops]") {
    Rng rng = Rng::seeded(24);
    Tensor<double> x = random_tensor({2, 6}, rng);
    Tensor<double> w = random_tensor({3, 4}, rng);

    Tape tape;
    auto* y = ops::reshape(tape, tape.leaf_for(&x), {3, 4});
    for (std::int64_t i = 0; i < 12; ++i) REQUIRE(y->value[i] == x[i]);

    auto rep = check_gradients({{"x", &x}}, [&](Tape& t) {
        return ops::weighted_sum(t, ops::reshape(t, t.leaf_for(&x), {3, 4}), w);
    });
    REQUIRE(rep.max_rel < kGradTol);
}
