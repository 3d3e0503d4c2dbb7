// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#include <rnda/core/grad_check.hpp>
#include <rnda/core/ops.hpp>
#include <rnda/core/quaternion.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace rnda::ad {
namespace {

using rnda::testing::random_tensor;

TEST(Tape, LinearGraphEvaluates) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0));
    Var y = scale(x, 2.0);
    EXPECT_DOUBLE_EQ(y.value().item(), 6.0);
    t.set_input(x, Tensor::scalar(-1.5));
    t.eval();
    EXPECT_DOUBLE_EQ(y.value().item(), -3.0);
}

TEST(Tape, SoftmaxOfZerosIsUniform) {
    Tape t;
    Var y = softmax(t.leaf(Tensor({3}, 0.0)));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.value()[i], 1.0 / 3.0, 1e-15);
}

TEST(Tape, SoftmaxRowsArePositiveAndSumToOne) {
    Rng rng(4);
    Tape t;
    Var y = softmax(t.leaf(random_tensor(rng, {20, 7}, -30, 30)));
    for (std::size_t i = 0; i < 20; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            EXPECT_GT(y.value().at(i, j), 0.0);
            s += y.value().at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

// Straight-line evaluation of tanh(tanh(x W1 + b1) W2 + b2) W3 + b3.
std::vector<double> reference_mlp(const std::vector<Tensor> &w, const Tensor &x) {
    std::vector<double> h(x.storage());
    std::size_t rows = x.dim(0), in = x.dim(1);
    for (int layer = 0; layer < 3; ++layer) {
        const Tensor &W = w[2 * layer];
        const Tensor &b = w[2 * layer + 1];
        std::size_t out = W.dim(1);
        std::vector<double> next(rows * out);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < in; ++k) s += h[r * in + k] * W.at(k, j);
                s += b[j];
                next[r * out + j] = layer < 2 ? std::tanh(s) : s;
            }
        h = std::move(next);
        in = out;
    }
    return h;
}

TEST(Tape, PerceptronMatchesStraightLineEvaluation) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> w = {random_tensor(rng, {5, 16}), random_tensor(rng, {1, 16}),
                                 random_tensor(rng, {16, 16}), random_tensor(rng, {1, 16}),
                                 random_tensor(rng, {16, 3}), random_tensor(rng, {1, 3})};
        Tensor x = random_tensor(rng, {8, 5});
        Tape t;
        Var h = t.leaf(x);
        for (int layer = 0; layer < 3; ++layer) {
            h = add(matmul(h, t.leaf(w[2 * layer])), t.leaf(w[2 * layer + 1]));
            if (layer < 2) h = tanh(h);
        }
        auto ref = reference_mlp(w, x);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LT(std::abs(h.value()[i] - ref[i]), 1e-12);
    }
}

TEST(Tape, ReplayIsBitIdentical) {
    Rng rng(2);
    Tape t;
    Tensor x0 = random_tensor(rng, {4, 4});
    Var x = t.leaf(x0);
    Var y = sum(softmax(tanh(matmul(x, x))));
    double first = y.value().item();
    t.set_input(x, x0);
    t.eval();
    EXPECT_EQ(first, y.value().item());
}

TEST(Tape, SquareGradient) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0));
    Var y = mul(x, x);
    t.backward(y);
    EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Tape, ConstantOutputHasZeroGradient) {
    Tape t;
    Var x = t.leaf(Tensor({3}, 1.0));
    Var c = t.constant(Tensor::scalar(2.0));
    t.backward(sum(c));
    Tensor g = t.grad(x);
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tape, BackwardBeforeForwardThrows) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(1.0));
    Var y = exp(x);
    t.set_input(x, Tensor::scalar(2.0));
    EXPECT_THROW(t.backward(y), Error);
}

TEST(Tape, ShapeMismatchNamesNode) {
    Tape t;
    Var a = t.leaf(Tensor({2, 3}));
    Var b = t.leaf(Tensor({4, 2}));
    try {
        matmul(a, b);
        FAIL() << "expected a shape error";
    } catch (const ShapeError &e) {
        EXPECT_EQ(e.node(), 2u);
        EXPECT_EQ(e.op(), "matmul");
    }
}

TEST(Tape, SeedShapeMustMatch) {
    Tape t;
    Var x = t.leaf(Tensor({2}));
    EXPECT_THROW(t.backward(x, Tensor({3})), ShapeError);
}

TEST(Tape, NonFiniteValuesAreRejected) {
    Tape t;
    Var x = t.leaf(Tensor::scalar(-1.0));
    EXPECT_THROW(log(x), NumericError);
}

TEST(GradCheck, SumHasConstantGradient) {
    Rng rng(1);
    double err = grad_check([](Tape &, Var x) { return sum(x); }, random_tensor(rng, {6}));
    EXPECT_LT(err, 1e-10);
}

TEST(GradCheck, SquaredNorm) {
    auto r = grad_check_detailed([](Tape &, Var x) { return sum(mul(x, x)); }, Tensor({2}, {1.0, 2.0}), 1e-5);
    EXPECT_DOUBLE_EQ(r.analytic[0], 2.0);
    EXPECT_DOUBLE_EQ(r.analytic[1], 4.0);
    EXPECT_LT(r.max_error, 1e-8);
}

TEST(GradCheck, NonFiniteFunctionThrows) {
    EXPECT_THROW(grad_check([](Tape &, Var x) { return sum(log(x)); }, Tensor({1}, {-1.0})), NumericError);
}

// Each primitive composed with a fixed random projection so every output
// element influences the scalar.
struct Primitive {
    const char *name;
    Shape shape;
    std::function<Var(Tape &, Var, Rng &)> build;
    double lo = -1.0, hi = 1.0;
};

Var project(Tape &t, Var y, Rng &rng) {
    return sum(mul(y, t.constant(random_tensor(rng, y.shape()))));
}

TEST(GradCheck, EveryPrimitiveOnRandomPoints) {
    std::vector<Primitive> prims = {
        {"add", {3, 4}, [](Tape &t, Var x, Rng &r) { return add(x, t.constant(random_tensor(r, {1, 4}))); }},
        {"sub", {3, 4}, [](Tape &t, Var x, Rng &r) { return sub(t.constant(random_tensor(r, {3, 1})), x); }},
        {"mul", {3, 4}, [](Tape &, Var x, Rng &) { return mul(x, x); }},
        {"div", {3, 4}, [](Tape &t, Var x, Rng &r) { return div(t.constant(random_tensor(r, {3, 4})), x); }, 0.5, 2.0},
        {"exp", {5}, [](Tape &, Var x, Rng &) { return exp(x); }},
        {"log", {5}, [](Tape &, Var x, Rng &) { return log(x); }, 0.2, 3.0},
        {"tanh", {5}, [](Tape &, Var x, Rng &) { return tanh(x); }},
        {"sigmoid", {5}, [](Tape &, Var x, Rng &) { return sigmoid(x); }},
        {"softplus", {5}, [](Tape &, Var x, Rng &) { return softplus(x); }},
        {"sin", {5}, [](Tape &, Var x, Rng &) { return sin(x); }},
        {"cos", {5}, [](Tape &, Var x, Rng &) { return cos(x); }},
        {"sqrt", {5}, [](Tape &, Var x, Rng &) { return sqrt(x); }, 0.2, 3.0},
        {"smooth_abs", {5}, [](Tape &, Var x, Rng &) { return smooth_abs(x, 1e-6); }},
        {"matmul", {3, 4}, [](Tape &t, Var x, Rng &r) { return matmul(x, t.constant(random_tensor(r, {4, 2}))); }},
        {"matmul_rhs", {4, 2}, [](Tape &t, Var x, Rng &r) { return matmul(t.constant(random_tensor(r, {3, 4})), x); }},
        {"bmm", {2, 3, 4}, [](Tape &t, Var x, Rng &r) { return bmm(x, t.constant(random_tensor(r, {2, 4, 2}))); }},
        {"transpose", {2, 3, 4}, [](Tape &, Var x, Rng &) { return transpose(x); }},
        {"reshape", {3, 4}, [](Tape &, Var x, Rng &) { return reshape(x, {2, 6}); }},
        {"concat", {3, 4}, [](Tape &, Var x, Rng &) { return concat({x, tanh(x)}, 1); }},
        {"slice", {3, 4}, [](Tape &, Var x, Rng &) { return slice(x, 1, 1, 3); }},
        {"gather_rows", {3, 4}, [](Tape &, Var x, Rng &) { return gather_rows(x, {2, 0, 2}); }},
        {"mean", {3, 4}, [](Tape &, Var x, Rng &) { return mean(mul(x, x)); }},
        {"sum_last", {3, 4}, [](Tape &, Var x, Rng &) { return sum_last(x); }},
        {"l2norm", {3, 4}, [](Tape &, Var x, Rng &) { return l2norm(x); }},
        {"normalize", {3, 4}, [](Tape &, Var x, Rng &) { return normalize(x); }},
        {"softmax", {3, 4}, [](Tape &, Var x, Rng &) { return softmax(x); }},
        {"attention_q", {3, 4},
         [](Tape &t, Var x, Rng &r) {
             return attention(x, t.constant(random_tensor(r, {5, 4})), t.constant(random_tensor(r, {5, 2})));
         }},
        {"attention_kv", {5, 4},
         [](Tape &t, Var x, Rng &r) { return attention(t.constant(random_tensor(r, {3, 4})), x, x); }},
        {"conv2d_x", {5, 6, 2},
         [](Tape &t, Var x, Rng &r) {
             return conv2d(x, t.constant(random_tensor(r, {18, 3})), t.constant(random_tensor(r, {3})), 3, 2, 1);
         }},
        {"conv2d_w", {18, 3},
         [](Tape &t, Var x, Rng &r) {
             return conv2d(t.constant(random_tensor(r, {5, 6, 2})), x, t.constant(random_tensor(r, {3})), 3, 2, 1);
         }},
        {"quat_to_rotmat", {3, 4}, [](Tape &, Var x, Rng &) { return quat_to_rotmat(x); }},
    };
    for (const auto &p : prims) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            Tensor point = random_tensor(rng, p.shape, p.lo, p.hi);
            std::uint64_t build_seed = 1000 + seed;
            auto f = [&](Tape &t, Var x) {
                Rng r(build_seed);
                return project(t, p.build(t, x, r), r);
            };
            double err = grad_check(f, point, 1e-5);
            ASSERT_LE(err, 1e-4) << p.name << " seed " << seed;
        }
    }
}

TEST(Quaternion, IdentityAndAxisRotation) {
    Mat3 id = quat_to_rotmat(Quaternion{1, 0, 0, 0});
    Mat3 expect_id{1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(id[i], expect_id[i]);
    double h = std::numbers::sqrt2 / 2;
    Mat3 rz = quat_to_rotmat(Quaternion{h, 0, 0, h});
    Mat3 expect{0, -1, 0, 1, 0, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(rz[i], expect[i], 1e-15);
}

TEST(Quaternion, RandomRotationsAreOrthonormal) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        Mat3 r = quat_to_rotmat(q);
        Mat3 rtr = matmul3(transpose3(r), r);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) EXPECT_NEAR(rtr[a * 3 + b], a == b ? 1.0 : 0.0, 1e-12);
        EXPECT_NEAR(det3(r), 1.0, 1e-12);
    }
}

TEST(Quaternion, NormalizationIsUnit) {
    Quaternion q = Quaternion{3, -1, 2, 0.5}.normalized();
    EXPECT_NEAR(q.norm(), 1.0, 1e-9);
}

TEST(Quaternion, ZeroNormThrows) {
    EXPECT_THROW(quat_to_rotmat(Quaternion{0, 0, 0, 0}), Error);
}

TEST(Quaternion, TapeOpMatchesScalarConversion) {
    Rng rng(9);
    Tape t;
    Tensor q = random_tensor(rng, {6, 4});
    Var r = quat_to_rotmat(t.leaf(q));
    for (std::size_t i = 0; i < 6; ++i) {
        Mat3 ref = quat_to_rotmat(Quaternion{q.at(i, 0), q.at(i, 1), q.at(i, 2), q.at(i, 3)});
        for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(r.value()[9 * i + k], ref[k], 1e-14);
    }
}

} // namespace
} // namespace rnda::ad
