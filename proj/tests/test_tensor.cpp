#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ustep/gradcheck.hpp"
#include "ustep/optim.hpp"
#include "ustep/tensor.hpp"

using namespace ustep;

namespace {

// Direct nested-loop cross-correlation with zero padding; the independent
// oracle for conv2d.
std::vector<double> conv2d_reference(const std::vector<double>& in, int64_t cin, int64_t h,
                                     int64_t w, const std::vector<double>& weight, int64_t cout,
                                     int64_t k, const std::vector<double>& bias) {
    const int64_t pad = (k - 1) / 2;
    std::vector<double> out(static_cast<size_t>(cout * h * w), 0.0);
    for (int64_t co = 0; co < cout; ++co) {
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                double acc = bias[static_cast<size_t>(co)];
                for (int64_t ci = 0; ci < cin; ++ci) {
                    for (int64_t ky = 0; ky < k; ++ky) {
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t iy = y + ky - pad;
                            const int64_t ix = x + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                                continue;
                            }
                            acc += in[static_cast<size_t>((ci * h + iy) * w + ix)] *
                                   weight[static_cast<size_t>(((co * cin + ci) * k + ky) * k +
                                                              kx)];
                        }
                    }
                }
                out[static_cast<size_t>((co * h + y) * w + x)] = acc;
            }
        }
    }
    return out;
}

} // namespace

TEST(Conv2d, ScalarMultiplyAdd) {
    Tensor in = Tensor::from_data({1, 1, 1}, {3.0});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
    Tensor b = Tensor::from_data({1}, {0.5});
    EXPECT_DOUBLE_EQ(conv2d(in, w, b).item(), 6.5);
}

TEST(Conv2d, IdentityKernelIsIdentityMap) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> values(2 * 5 * 7);
    for (auto& v : values) {
        v = dist(rng);
    }
    Tensor in = Tensor::from_data({2, 5, 7}, values);
    std::vector<double> w(2 * 2 * 9, 0.0);
    w[0 * 2 * 9 + 0 * 9 + 4] = 1.0; // center tap, channel 0 -> 0
    w[1 * 2 * 9 + 1 * 9 + 4] = 1.0; // center tap, channel 1 -> 1
    Tensor weight = Tensor::from_data({2, 2, 3, 3}, w);
    Tensor out = conv2d(in, weight, Tensor::zeros({2}));
    const auto ov = out.data();
    for (size_t i = 0; i < values.size(); ++i) {
        EXPECT_DOUBLE_EQ(ov[i], values[i]);
    }
}

TEST(Conv2d, AllOnesKernelOn2x2MatchesHandSum) {
    // [[1,2],[3,4]] under a 3x3 all-ones kernel with zero padding: every
    // output tap sees the whole image.
    Tensor in = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor out = conv2d(in, w, Tensor::zeros({1}));
    for (double v : out.data()) {
        EXPECT_DOUBLE_EQ(v, 10.0);
    }
    const auto oracle = conv2d_reference({1, 2, 3, 4}, 1, 2, 2,
                                         std::vector<double>(9, 1.0), 1, 3, {0.0});
    const auto ov = out.data();
    for (size_t i = 0; i < oracle.size(); ++i) {
        EXPECT_DOUBLE_EQ(ov[i], oracle[i]);
    }
}

TEST(Conv2d, MatchesReferenceOnRandomShapes) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t cin = 1 + static_cast<int64_t>(rng() % 3);
        const int64_t cout = 1 + static_cast<int64_t>(rng() % 3);
        const int64_t h = 1 + static_cast<int64_t>(rng() % 6);
        const int64_t w = 1 + static_cast<int64_t>(rng() % 6);
        const int64_t k = (rng() % 2 == 0) ? 1 : 3;
        auto fill = [&](int64_t n) {
            std::vector<double> v(static_cast<size_t>(n));
            for (auto& x : v) {
                x = dist(rng);
            }
            return v;
        };
        const auto in = fill(cin * h * w);
        const auto weight = fill(cout * cin * k * k);
        const auto bias = fill(cout);
        Tensor out = conv2d(Tensor::from_data({cin, h, w}, in),
                            Tensor::from_data({cout, cin, k, k}, weight),
                            Tensor::from_data({cout}, bias));
        const auto oracle = conv2d_reference(in, cin, h, w, weight, cout, k, bias);
        const auto ov = out.data();
        for (size_t i = 0; i < oracle.size(); ++i) {
            EXPECT_NEAR(ov[i], oracle[i], 1e-12);
        }
    }
}

TEST(Conv2d, RejectsChannelMismatch) {
    Tensor in = Tensor::zeros({3, 4, 4});
    Tensor w = Tensor::zeros({2, 4, 3, 3});
    EXPECT_THROW(conv2d(in, w, Tensor::zeros({2})), ShapeError);
}

TEST(Conv2d, RejectsEvenKernel) {
    Tensor in = Tensor::zeros({1, 4, 4});
    Tensor w = Tensor::zeros({1, 1, 2, 2});
    EXPECT_THROW(conv2d(in, w, Tensor::zeros({1})), ConfigError);
}

TEST(Sigmoid, KnownValues) {
    Tensor x = Tensor::from_data({3}, {0.0, -100.0, std::log(3.0)});
    const Tensor y = sigmoid(x);
    const auto out = y.data();
    EXPECT_DOUBLE_EQ(out[0], 0.5);
    EXPECT_LT(out[1], 1e-6);
    EXPECT_TRUE(std::isfinite(out[1]));
    EXPECT_NEAR(out[2], 0.75, 1e-15);
}

TEST(Elementwise, AddAndMul) {
    Tensor a = Tensor::from_data({2}, {1.0, 2.0});
    Tensor b = Tensor::from_data({2}, {3.0, 4.0});
    const Tensor sum_ab = add(a, b);
    const auto s = sum_ab.data();
    EXPECT_DOUBLE_EQ(s[0], 4.0);
    EXPECT_DOUBLE_EQ(s[1], 6.0);

    Tensor x = Tensor::from_data({2}, {2.0, 3.0});
    Tensor y = Tensor::from_data({2}, {4.0, 5.0});
    const Tensor prod = mul(x, y);
    const auto p = prod.data();
    EXPECT_DOUBLE_EQ(p[0], 8.0);
    EXPECT_DOUBLE_EQ(p[1], 15.0);

    const Tensor ident = mul(x, Tensor::full({2}, 1.0));
    const auto idp = ident.data();
    EXPECT_DOUBLE_EQ(idp[0], 2.0);
    EXPECT_DOUBLE_EQ(idp[1], 3.0);

    EXPECT_THROW(add(a, Tensor::zeros({3})), ShapeError);
}

TEST(MseLoss, KnownValues) {
    Tensor p = Tensor::from_data({2}, {0.0, 2.0});
    Tensor t = Tensor::from_data({2}, {1.0, 0.0});
    EXPECT_DOUBLE_EQ(mse_loss(p, t).item(), 2.5);
    EXPECT_DOUBLE_EQ(mse_loss(t, t).item(), 0.0);
    EXPECT_DOUBLE_EQ(mse_loss(Tensor::full({4}, 1.0), Tensor::zeros({4})).item(), 1.0);
    EXPECT_THROW(mse_loss(p, Tensor::zeros({3})), ShapeError);
}

TEST(Backward, HandChainRule) {
    // loss = mse(w * x, 0) with w = 1, x = 2: dL/dw = 2 * (w x) * x = 8.
    Tensor w = Tensor::scalar(1.0, true);
    Tensor x = Tensor::scalar(2.0);
    Tensor loss = mse_loss(mul(w, x), Tensor::scalar(0.0));
    w.zero_grad();
    backward(loss);
    EXPECT_DOUBLE_EQ(w.grad()[0], 8.0);
}

TEST(Backward, UnreachableParameterKeepsZeroGrad) {
    Tensor p = Tensor::scalar(3.0, true);
    Tensor q = Tensor::scalar(4.0, true);
    p.zero_grad();
    q.zero_grad();
    backward(mse_loss(q, Tensor::scalar(0.0)));
    EXPECT_DOUBLE_EQ(p.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(q.grad()[0], 8.0);
}

TEST(Backward, SigmoidDerivativeAtZero) {
    Tensor w = Tensor::zeros({4}, true);
    w.zero_grad();
    backward(sum(sigmoid(w)));
    for (double g : w.grad()) {
        EXPECT_DOUBLE_EQ(g, 0.25);
    }
}

TEST(Backward, RejectsNonScalarLoss) {
    Tensor w = Tensor::zeros({4}, true);
    EXPECT_THROW(backward(sigmoid(w)), ConfigError);
}

TEST(Backward, AccumulatesAcrossCalls) {
    Tensor w = Tensor::scalar(3.0, true);
    w.zero_grad();
    Tensor loss = mse_loss(w, Tensor::scalar(0.0)); // dL/dw = 6
    backward(loss);
    backward(loss);
    EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Backward, SumOfLossesEqualsSumOfPasses) {
    auto build = [](double v) {
        return Tensor::scalar(v, true);
    };
    Tensor w1 = build(0.7);
    Tensor w2 = build(-0.3);
    auto loss_a = [&] { return mse_loss(mul(w1, w2), Tensor::scalar(1.0)); };
    auto loss_b = [&] { return sum(sigmoid(add(w1, w2))); };

    w1.zero_grad();
    w2.zero_grad();
    backward(add(loss_a(), loss_b()));
    const double joint1 = w1.grad()[0];
    const double joint2 = w2.grad()[0];

    w1.zero_grad();
    w2.zero_grad();
    backward(loss_a());
    backward(loss_b());
    EXPECT_DOUBLE_EQ(w1.grad()[0], joint1);
    EXPECT_DOUBLE_EQ(w2.grad()[0], joint2);
}

TEST(Backward, DiamondGraphReusesNode) {
    // y = w * w exercises fan-out through one node: dy/dw = 2w.
    Tensor w = Tensor::scalar(5.0, true);
    w.zero_grad();
    backward(mul(w, w));
    EXPECT_DOUBLE_EQ(w.grad()[0], 10.0);
}

TEST(GradMode, NoGradGuardSuppressesGraph) {
    Tensor w = Tensor::scalar(1.0, true);
    NoGradGuard guard;
    Tensor y = mul(w, w);
    EXPECT_FALSE(y.requires_grad());
}

TEST(DebugChecks, NonFiniteRaisesWhenEnabled) {
    const bool prev = debug_checks_enabled();
    set_debug_checks(true);
    Tensor big = Tensor::full({1}, 1e308);
    EXPECT_THROW(mul(big, big), DataError);
    set_debug_checks(prev);
}

TEST(GradCheck, QuadraticIsExact) {
    ParamStore params;
    params.add("w", Tensor::scalar(3.0, true));
    auto f = [&] {
        const Tensor& w = params.at("w");
        return mul(w, w);
    };
    const auto result = gradcheck(f, params, {.eps = 1e-4});
    EXPECT_LT(result.max_rel_error, 1e-6);
}

TEST(GradCheck, ConstantFunctionGivesZeroError) {
    ParamStore params;
    params.add("w", Tensor::scalar(2.0, true));
    auto f = [&] { return Tensor::scalar(7.0, true); };
    const auto result = gradcheck(f, params, {});
    EXPECT_DOUBLE_EQ(result.max_rel_error, 0.0);
}

TEST(GradCheck, InjectedErrorIsDetected) {
    ParamStore params;
    params.add("w", Tensor::scalar(3.0, true));
    auto f = [&] {
        const Tensor& w = params.at("w");
        return mul(w, w);
    };
    const auto result = gradcheck(f, params, {.eps = 1e-4, .inject_error = 1.0});
    EXPECT_GT(result.max_rel_error, 1e-2);
    EXPECT_EQ(result.worst_param, "w");
}

// Randomized gradcheck over every differentiable op on small shapes.
TEST(GradCheck, RandomizedOpsStayUnderTolerance) {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> dist(-0.9, 0.9);
    auto random_tensor = [&](std::vector<int64_t> shape, bool requires_grad) {
        int64_t n = 1;
        for (int64_t d : shape) {
            n *= d;
        }
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) {
            x = dist(rng);
        }
        return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
    };

    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t h = 1 + static_cast<int64_t>(rng() % 4);
        const int64_t w = 1 + static_cast<int64_t>(rng() % 4);
        const int64_t cin = 1 + static_cast<int64_t>(rng() % 3);
        const int64_t cout = 1 + static_cast<int64_t>(rng() % 3);
        const int64_t k = (rng() % 2 == 0) ? 1 : 3;

        ParamStore params;
        params.add("input", random_tensor({cin, h, w}, true));
        params.add("weight", random_tensor({cout, cin, k, k}, true));
        params.add("bias", random_tensor({cout}, true));
        params.add("mix", random_tensor({cout, h, w}, true));

        const int op = trial % 5;
        auto f = [&]() -> Tensor {
            Tensor conv = conv2d(params.at("input"), params.at("weight"), params.at("bias"));
            switch (op) {
            case 0:
                return sum(mul(conv, params.at("mix")));
            case 1:
                return sum(sigmoid(add(conv, params.at("mix"))));
            case 2:
                return mse_loss(conv, params.at("mix"));
            case 3:
                return sum(silu(conv));
            default:
                return sum(slice_leading(scale(add(conv, params.at("mix")), 1.7), 0, cout));
            }
        };
        const auto result = gradcheck(f, params, {.eps = 1e-5});
        worst = std::max(worst, result.max_rel_error);
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> in(3 * 6 * 6), w(4 * 3 * 9), b(4);
    for (auto* v : {&in, &w, &b}) {
        for (auto& x : *v) {
            x = dist(rng);
        }
    }
    auto run = [&] {
        Tensor out = silu(conv2d(Tensor::from_data({3, 6, 6}, in),
                                 Tensor::from_data({4, 3, 3, 3}, w), Tensor::from_data({4}, b)));
        return std::vector<double>(out.data().begin(), out.data().end());
    };
    const auto a = run();
    const auto c = run();
    ASSERT_EQ(a.size(), c.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], c[i]); // bitwise
    }
}

TEST(AdamW, ZeroGradZeroDecayLeavesParamsUnchanged) {
    ParamStore params;
    params.add("w", Tensor::from_data({2}, {1.5, -0.5}, true));
    params.zero_grad();
    AdamState state;
    adamw_step(params, state, {.lr = 0.01, .weight_decay = 0.0});
    EXPECT_DOUBLE_EQ(params.at("w").data()[0], 1.5);
    EXPECT_DOUBLE_EQ(params.at("w").data()[1], -0.5);
}

TEST(AdamW, FirstStepMovesByLrAgainstUnitGradient) {
    ParamStore params;
    params.add("w", Tensor::scalar(0.0, true));
    params.at("w").mutable_grad()[0] = 1.0;
    AdamState state;
    adamw_step(params, state, {.lr = 0.01, .weight_decay = 0.0});
    EXPECT_NEAR(params.at("w").item(), -0.01, 1e-9);
}

TEST(AdamW, MissingGradIsContractError) {
    ParamStore params;
    params.add("w", Tensor::scalar(0.0, true));
    AdamState state;
    EXPECT_THROW(adamw_step(params, state, {}), ConfigError);
}

TEST(AdamW, DecoupledDecayShrinksWithoutGradient) {
    ParamStore params;
    params.add("w", Tensor::scalar(2.0, true));
    params.zero_grad();
    AdamState state;
    adamw_step(params, state, {.lr = 0.1, .weight_decay = 0.5});
    // p -= lr * wd * p with zero moments.
    EXPECT_NEAR(params.at("w").item(), 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(ParamStore, KeepsInsertionOrderAndRejectsDuplicates) {
    ParamStore params;
    params.add("b", Tensor::scalar(1.0, true));
    params.add("a", Tensor::scalar(2.0, true));
    std::vector<std::string> names;
    for (const auto& [name, t] : params) {
        names.push_back(name);
    }
    ASSERT_EQ(names.size(), 2u);
    EXPECT_EQ(names[0], "b");
    EXPECT_EQ(names[1], "a");
    EXPECT_THROW(params.add("a", Tensor::scalar(0.0, true)), ConfigError);
    EXPECT_THROW(params.add("c", Tensor::scalar(0.0, false)), ConfigError);
}
