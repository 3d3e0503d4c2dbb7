// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#include <rnda/core/grad_check.hpp>
#include <rnda/objectives/losses.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

namespace rnda::objectives {
namespace {

using rnda::testing::random_tensor;
using rnda::testing::random_unit;

ad::Tensor full_mask(std::size_t h, std::size_t w) {
    ad::Tensor m({h, w});
    for (double &v : m.values()) v = 1.0;
    return m;
}

double value_of(const std::function<ad::Var(ad::Tape &)> &f) {
    ad::Tape t;
    return f(t).value().item();
}

// ---------------------------------------------------------------- L1

TEST(L1Image, IdenticalImagesGiveZero) {
    Rng rng(1);
    ad::Tensor a = random_tensor(rng, {8, 8, 3});
    EXPECT_EQ(value_of([&](ad::Tape &t) { return l1_image(t.constant(a), t.constant(a), full_mask(8, 8)); }), 0.0);
}

TEST(L1Image, ConstantOffset) {
    Rng rng(2);
    ad::Tensor a = random_tensor(rng, {8, 8, 3}), b = a;
    for (double &v : b.values()) v += 0.1;
    EXPECT_NEAR(value_of([&](ad::Tape &t) { return l1_image(t.constant(a), t.constant(b), full_mask(8, 8)); }), 0.1,
                1e-6);
}

TEST(L1Image, OnlyForegroundCounts) {
    ad::Tensor a({2, 2, 1}), b({2, 2, 1}), gt_alpha({2, 2});
    b[0] = 0.4;
    b[3] = 100.0; // background pixel
    gt_alpha[0] = 0.2;
    gt_alpha[1] = 1.0;
    ad::Tensor mask = foreground_mask(gt_alpha);
    EXPECT_NEAR(value_of([&](ad::Tape &t) { return l1_image(t.constant(a), t.constant(b), mask); }), 0.2, 1e-6);
    EXPECT_EQ(value_of([&](ad::Tape &t) { return l1_image(t.constant(a), t.constant(b), ad::Tensor({2, 2})); }), 0.0);
}

TEST(L1Image, ShapeMismatchThrows) {
    ad::Tape t;
    EXPECT_THROW(l1_image(t.constant(ad::Tensor({4, 4, 3})), t.constant(ad::Tensor({4, 4, 1})), full_mask(4, 4)),
                 ShapeError);
    EXPECT_THROW(l1_image(t.constant(ad::Tensor({4, 4, 3})), t.constant(ad::Tensor({4, 4, 3})), full_mask(4, 3)),
                 ShapeError);
}

TEST(NormalLoss, FlippedAxisNormalsDifferByOnePerPixel) {
    // Axis-aligned n vs -n: the axis channel goes 1 -> 0, the others stay at 0.5.
    ad::Tensor a({4, 4, 3}), b({4, 4, 3});
    for (std::size_t p = 0; p < 16; ++p) {
        std::size_t axis = p % 3;
        for (std::size_t c = 0; c < 3; ++c) {
            a[p * 3 + c] = c == axis ? 1.0 : 0.5;
            b[p * 3 + c] = c == axis ? 0.0 : 0.5;
        }
    }
    double v = value_of([&](ad::Tape &t) { return normal_loss(t.constant(a), t.constant(b), full_mask(4, 4)); });
    EXPECT_NEAR(3.0 * v, 1.0, 1e-6); // loss averages over the 3 channels
}

// ---------------------------------------------------------------- perceptual

TEST(Perceptual, IdenticalIsZeroAndDifferentIsPositive) {
    FeatureExtractor phi(7);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        ad::Tensor a = random_tensor(rng, {16, 16, 3}, 0, 1), b = random_tensor(rng, {16, 16, 3}, 0, 1);
        EXPECT_EQ(value_of([&](ad::Tape &t) { return perceptual(phi, t.constant(a), t.constant(a)); }), 0.0);
        EXPECT_GT(value_of([&](ad::Tape &t) { return perceptual(phi, t.constant(a), t.constant(b)); }), 0.0);
    }
}

TEST(Perceptual, SameSeedSameFeatures) {
    Rng rng(4);
    ad::Tensor a = random_tensor(rng, {16, 16, 3}, 0, 1), b = random_tensor(rng, {16, 16, 3}, 0, 1);
    FeatureExtractor p1(9), p2(9), p3(10);
    double v1 = value_of([&](ad::Tape &t) { return perceptual(p1, t.constant(a), t.constant(b)); });
    double v2 = value_of([&](ad::Tape &t) { return perceptual(p2, t.constant(a), t.constant(b)); });
    double v3 = value_of([&](ad::Tape &t) { return perceptual(p3, t.constant(a), t.constant(b)); });
    EXPECT_EQ(v1, v2);
    EXPECT_NE(v1, v3);
}

TEST(Perceptual, FeatureShapesHalveEachLayer) {
    FeatureExtractor phi;
    ad::Tape t;
    auto f = phi.features(t.constant(ad::Tensor({64, 64, 3})));
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0].shape(), (ad::Shape{32, 32, 16}));
    EXPECT_EQ(f[1].shape(), (ad::Shape{16, 16, 32}));
    EXPECT_EQ(f[2].shape(), (ad::Shape{8, 8, 64}));
}

// ---------------------------------------------------------------- composites

TEST(StageLosses, MatchHandSummedComponents) {
    Rng rng(5);
    FeatureExtractor phi(1);
    ad::Tensor gt = random_tensor(rng, {16, 16, 3}, 0, 1), pr = random_tensor(rng, {16, 16, 3}, 0, 1);
    ad::Tensor gn = random_tensor(rng, {16, 16, 3}, 0, 1), pn = random_tensor(rng, {16, 16, 3}, 0, 1);
    ad::Tensor mask = full_mask(16, 16);
    mask[0] = 0.0;
    LossWeights w{0.3, 0.7, 0.2};
    ad::Tape t;
    ad::Var G = t.constant(gt), P = t.constant(pr), GN = t.constant(gn), PN = t.constant(pn);
    double l1 = l1_image(G, P, mask).value().item();
    double lp = perceptual(phi, G, P).value().item();
    double ln = normal_loss(GN, PN, mask).value().item();
    double gc = 1.75;
    EXPECT_NEAR(stage1_loss(phi, G, P, GN, PN, mask, w).value().item(), l1 + 0.3 * lp + 0.7 * ln, 1e-12);
    ad::Var gcv = t.constant(ad::Tensor::scalar(gc));
    EXPECT_NEAR(stage2_loss(phi, G, P, GN, PN, gcv, mask, w).value().item(), l1 + 0.3 * lp + 0.7 * ln + 0.2 * gc,
                1e-12);
    LossWeights no_n{0.3, 0.0, 0.0};
    EXPECT_NEAR(stage1_loss(phi, G, P, GN, PN, mask, no_n).value().item(), l1 + 0.3 * lp, 1e-12);
    EXPECT_NEAR(stage2_loss(phi, G, P, GN, PN, gcv, mask, no_n).value().item(), l1 + 0.3 * lp, 1e-12);
    // Perfect renders leave only the consistency term.
    EXPECT_NEAR(stage2_loss(phi, G, G, GN, GN, gcv, mask, w).value().item(), 0.2 * gc, 1e-12);
    EXPECT_EQ(stage1_loss(phi, G, G, GN, GN, mask, w).value().item(), 0.0);
    EXPECT_THROW(stage1_loss(phi, G, P, GN, PN, mask, LossWeights{-1, 0, 0}), Error);
}

// ---------------------------------------------------------------- InfoNCE

ad::Tensor unit_rows(Rng &rng, std::size_t n, std::size_t d) {
    ad::Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += std::pow(t[i * d + k] = rng.normal(), 2);
        for (std::size_t k = 0; k < d; ++k) t[i * d + k] /= std::sqrt(s);
    }
    return t;
}

TEST(InfoNce, UniformSimilarityGivesLogNPerPositive) {
    for (std::size_t n : {2u, 5u, 64u}) {
        ad::Tensor y({n, 3});
        for (std::size_t i = 0; i < n; ++i) y[i * 3] = 1.0; // all identical: every similarity is 1
        double v = value_of([&](ad::Tape &t) { return infonce(t.constant(y), t.constant(y)); });
        EXPECT_NEAR(v, static_cast<double>(n) * std::log(static_cast<double>(n)), 1e-12 * n);
        EXPECT_NEAR(v / static_cast<double>(n), std::log(static_cast<double>(n)), 1e-12);
    }
}

TEST(InfoNce, OrthonormalPairClosedForm) {
    ad::Tensor y({2, 2});
    y[0] = 1.0;
    y[3] = 1.0;
    double v = value_of([&](ad::Tape &t) { return infonce(t.constant(y), t.constant(y)); });
    double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    EXPECT_NEAR(v / 2.0, expect, 1e-12);
    EXPECT_NEAR(expect, 0.3133, 5e-5);
}

TEST(InfoNce, NonNegativeAndMonotoneInPositiveSimilarity) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 8, d = 6;
        ad::Tensor y = unit_rows(rng, n, d), yp = unit_rows(rng, n, d);
        double base = value_of([&](ad::Tape &t) { return infonce(t.constant(y), t.constant(yp)); });
        EXPECT_GE(base, 0.0);
        // Pull y'_0 toward y_0 while keeping it unit; negatives for other rows change too, so
        // compare only the first term.
        auto first_term = [&](const ad::Tensor &a, const ad::Tensor &b) {
            double z = 0, pos = 0;
            for (std::size_t k = 0; k < n; ++k) {
                double s = 0;
                for (std::size_t c = 0; c < d; ++c) s += a[c] * b[k * d + c];
                z += std::exp(s);
                if (k == 0) pos = s;
            }
            return -(pos - std::log(z));
        };
        ad::Tensor closer = yp;
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += std::pow(closer[c] = 0.5 * (yp[c] + y[c]), 2);
        for (std::size_t c = 0; c < d; ++c) closer[c] /= std::sqrt(s);
        EXPECT_LT(first_term(y, closer), first_term(y, yp));
    }
}

TEST(InfoNce, RequiresTwoRows) {
    ad::Tape t;
    EXPECT_THROW(infonce(t.constant(ad::Tensor({1, 3})), t.constant(ad::Tensor({1, 3}))), ShapeError);
}

// ---------------------------------------------------------------- co-visibility

TEST(CoVisibility, AngleTest) {
    ad::Tensor pos({2, 3}), nrm({2, 3});
    nrm[1] = -1.0; // points to -y, toward a camera on -y
    nrm[4] = 1.0;  // points away
    auto v = visible_from(pos, nrm, {0, -4, 0});
    EXPECT_TRUE(v[0]);
    EXPECT_FALSE(v[1]);
}

TEST(CoVisibility, SphereMatchesBruteForceAngles) {
    Rng rng(7);
    const std::size_t n = 4000;
    ad::Tensor pos({n, 3}), nrm({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 u = random_unit(rng);
        for (int k = 0; k < 3; ++k) {
            pos[3 * i + k] = 0.5 * u[k];
            nrm[3 * i + k] = u[k];
        }
    }
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 cam = scale3(random_unit(rng), 3.0);
        auto v = visible_from(pos, nrm, cam);
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            Vec3 x{pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]}, nn{nrm[3 * i], nrm[3 * i + 1], nrm[3 * i + 2]};
            double ang = std::acos(std::clamp(dot3(nn, normalize3(sub3(cam, x))), -1.0, 1.0)) * 180.0 / std::numbers::pi;
            EXPECT_EQ(v[i], ang <= 81.0 + 1e-9) << ang;
            count += v[i];
        }
        // Points whose normal lies within 81 degrees of (c - x) on a sphere of radius 0.5 seen from distance 3:
        // cos(angle) = (3 cos(phi) - 0.5) / |c - x| >= cos(81 deg); the area fraction is (1 - cos(phi_max)) / 2.
        double lo = 0.0, hi = std::numbers::pi;
        for (int it = 0; it < 200; ++it) {
            double phi = 0.5 * (lo + hi);
            double dist = std::sqrt(9.0 + 0.25 - 3.0 * std::cos(phi));
            ((3.0 * std::cos(phi) - 0.5) / dist >= std::cos(81.0 * std::numbers::pi / 180.0) ? lo : hi) = phi;
        }
        double expected = 0.5 * (1.0 - std::cos(lo));
        EXPECT_NEAR(static_cast<double>(count) / n, expected, 0.03);
    }
}

TEST(CoVisibility, MaskLiesInsideAlphaSupportAndIgnoresCameraA) {
    Rng rng(8);
    auto s = rnda::testing::random_scene(rng, 60);
    ad::Tensor nrm({60, 3});
    for (std::size_t i = 0; i < 60; ++i) {
        Vec3 u = random_unit(rng);
        for (int k = 0; k < 3; ++k) nrm[3 * i + k] = u[k];
    }
    raster::Camera a = rnda::testing::test_camera();
    raster::Camera b = orbit_camera(a, 60.0, 0.0);
    raster::Camera a2 = orbit_camera(a, -40.0, 5.0);
    CoVisibility cv = covisibility_mask(s.means, s.cov, s.opacity, nrm, a, b);
    CoVisibility cv2 = covisibility_mask(s.means, s.cov, s.opacity, nrm, a2, b);
    EXPECT_EQ(cv.gaussians, cv2.gaussians);
    std::vector<raster::Splat2D> splats;
    for (std::size_t i = 0; i < 60; ++i) {
        Mat3 c;
        std::copy_n(s.cov.data() + 9 * i, 9, c.begin());
        if (auto sp = raster::project({s.means[3 * i], s.means[3 * i + 1], s.means[3 * i + 2]}, c, s.opacity[i], {1.0},
                                      i, a))
            splats.push_back(*sp);
    }
    raster::RenderedImage img = raster::rasterize(splats, a);
    std::size_t on = 0;
    for (std::size_t p = 0; p < cv.mask.size(); ++p)
        if (cv.mask[p] > 0) {
            ++on;
            EXPECT_GT(img.alpha[p], 0.5);
        }
    EXPECT_GT(on, 0u);
}

// ---------------------------------------------------------------- sampling

TEST(FeatureSampling, FullMaskGivesDistinctLocations) {
    Rng rng(9);
    ad::Tape t;
    ad::Tensor f({4, 4, 2});
    for (std::size_t i = 0; i < 16; ++i) f[2 * i] = static_cast<double>(i);
    std::vector<ad::Var> fa{t.constant(f)};
    FeaturePairs p = sample_feature_pairs(fa, fa, full_mask(4, 4), 4, rng);
    EXPECT_FALSE(p.with_replacement);
    std::set<double> seen;
    for (std::size_t i = 0; i < 4; ++i) seen.insert(p.y[0].value()[2 * i]);
    EXPECT_EQ(seen.size(), 4u);
    EXPECT_EQ(ad::max_abs_diff(p.y[0].value(), p.y_prime[0].value()), 0.0);
}

TEST(FeatureSampling, EmptyMaskThrowsAndSmallMaskFlags) {
    Rng rng(10);
    ad::Tape t;
    std::vector<ad::Var> fa{t.constant(ad::Tensor({4, 4, 2}))};
    EXPECT_THROW(sample_feature_pairs(fa, fa, ad::Tensor({4, 4}), 4, rng), Error);
    ad::Tensor m({4, 4});
    m[5] = 1.0;
    FeaturePairs p = sample_feature_pairs(fa, fa, m, 4, rng);
    EXPECT_TRUE(p.with_replacement);
    EXPECT_EQ(p.y[0].dim(0), 4u);
}

TEST(FeatureSampling, MaskIsDownsampledPerLayer) {
    Rng rng(11);
    ad::Tape t;
    ad::Tensor f8({8, 8, 1}), f4({4, 4, 1});
    for (std::size_t i = 0; i < 64; ++i) f8[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < 16; ++i) f4[i] = static_cast<double>(i);
    ad::Tensor m({8, 8});
    m[6 * 8 + 2] = 1.0; // pixel (x=2, y=6) -> layer-2 cell (1, 3)
    FeaturePairs p = sample_feature_pairs({t.constant(f8), t.constant(f4)}, {t.constant(f8), t.constant(f4)}, m, 1, rng);
    EXPECT_EQ(p.y[0].value()[0], 50.0);
    EXPECT_EQ(p.y[1].value()[0], 13.0);
}

TEST(FeatureSampling, CorrespondingPairsAreMoreSimilar) {
    FeatureExtractor phi(3);
    Rng rng(12);
    double pos_sum = 0, neg_sum = 0;
    for (int trial = 0; trial < 10; ++trial) {
        ad::Tensor img = random_tensor(rng, {32, 32, 3}, 0, 1);
        ad::Tape t;
        auto fa = phi.features(t.constant(img));
        FeaturePairs p = sample_feature_pairs(fa, fa, full_mask(32, 32), 16, rng);
        for (std::size_t l = 0; l < p.y.size(); ++l) {
            ad::Tensor s = ad::matmul(p.y[l], ad::transpose(p.y_prime[l])).value();
            for (std::size_t i = 0; i < 16; ++i)
                for (std::size_t j = 0; j < 16; ++j) (i == j ? pos_sum : neg_sum) += s[i * 16 + j] / (i == j ? 1 : 15);
        }
    }
    EXPECT_GT(pos_sum, neg_sum);
}

TEST(FeatureSampling, GaussianCorrespondencesProjectIntoBothViews) {
    ad::Tensor pos({1, 3}), cov({1, 3, 3}), op({1, 1}), nrm({1, 3});
    cov[0] = cov[4] = cov[8] = 0.04;
    op[0] = 0.99;
    nrm[1] = -1.0;
    raster::Camera a = rnda::testing::test_camera();
    raster::Camera b = orbit_camera(a, 20.0, 0.0);
    CoVisibility cv = covisibility_mask(pos, cov, op, nrm, a, b);
    auto c = gaussian_correspondences(pos, cv, a, b);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_NEAR(c[0].ax, 16.0, 1e-9);
    EXPECT_NEAR(c[0].bx, 16.0, 1e-9);
}

// ---------------------------------------------------------------- virtual camera

TEST(VirtualCamera, ZeroPerturbationIsIdentity) {
    raster::Camera c = rnda::testing::test_camera();
    raster::Camera v = orbit_camera(c, 0.0, 0.0);
    EXPECT_EQ(v.rotation, c.rotation);
    EXPECT_EQ(v.translation, c.translation);
    ViewJitter none{0.0, 0.0};
    Rng rng(1);
    raster::Camera w = virtual_camera(c, rng, none);
    EXPECT_EQ(w.rotation, c.rotation);
}

TEST(VirtualCamera, KeepsTargetRadiusAndOrthonormality) {
    raster::Camera c = rnda::testing::test_camera();
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        raster::Camera v = virtual_camera(c, rng);
        EXPECT_NEAR(norm3(sub3(v.center(), v.target)), norm3(sub3(c.center(), c.target)), 1e-12);
        Vec3 fwd = normalize3(sub3(v.target, v.center()));
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(v.rotation[6 + k], fwd[k], 1e-12);
        Mat3 rrt = matmul3(v.rotation, transpose3(v.rotation));
        for (int k = 0; k < 9; ++k) EXPECT_NEAR(rrt[k], k % 4 == 0 ? 1.0 : 0.0, 1e-12);
        EXPECT_NEAR(det3(v.rotation), 1.0, 1e-12);
        Vec3 rel = sub3(v.center(), v.target);
        double az = std::atan2(rel[1], rel[0]) * 180 / std::numbers::pi;
        double el = std::asin(rel[2] / norm3(rel)) * 180 / std::numbers::pi;
        double daz = std::remainder(az - (-90.0), 360.0);
        EXPECT_LE(std::abs(daz), 30.0 + 1e-9);
        EXPECT_LE(std::abs(el), 10.0 + 1e-9);
    }
}

// ---------------------------------------------------------------- gradients

TEST(LossGradients, L1MatchesFiniteDifferences) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        ad::Tensor gt = random_tensor(rng, {6, 6, 3}, 0, 1), pr = random_tensor(rng, {6, 6, 3}, 0, 1);
        ad::Tensor mask = foreground_mask(random_tensor(rng, {6, 6}, -0.5, 1));
        worst = std::max(worst, ad::grad_check([&](ad::Tape &t, ad::Var x) { return l1_image(t.constant(gt), x, mask); },
                                               pr, 1e-8));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(LossGradients, NormalLossMatchesFiniteDifferences) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 50);
        ad::Tensor gt = random_tensor(rng, {5, 5, 3}, 0, 1), pr = random_tensor(rng, {5, 5, 3}, 0, 1);
        worst = std::max(worst, ad::grad_check([&](ad::Tape &t, ad::Var x) { return normal_loss(t.constant(gt), x, full_mask(5, 5)); },
                                               pr, 1e-8));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(LossGradients, PerceptualMatchesFiniteDifferences) {
    FeatureExtractor phi(5);
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 100);
        ad::Tensor a = random_tensor(rng, {8, 8, 3}, 0, 1), b = random_tensor(rng, {8, 8, 3}, 0, 1);
        worst = std::max(worst, ad::grad_check([&](ad::Tape &t, ad::Var x) { return perceptual(phi, t.constant(a), x); },
                                               b, 1e-6));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(LossGradients, InfoNceMatchesFiniteDifferences) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 200);
        ad::Tensor y = unit_rows(rng, 8, 5), yp = unit_rows(rng, 8, 5);
        worst = std::max(worst, ad::grad_check([&](ad::Tape &t, ad::Var x) { return infonce(x, t.constant(yp)); }, y, 1e-6));
        worst = std::max(worst, ad::grad_check([&](ad::Tape &t, ad::Var x) { return infonce(t.constant(y), x); }, yp, 1e-6));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(LossGradients, GeometricConsistencyThroughFeaturesMatchesFiniteDifferences) {
    FeatureExtractor phi(6);
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 300);
        ad::Tensor a = random_tensor(rng, {8, 8, 3}, 0, 1), b = random_tensor(rng, {8, 8, 3}, 0, 1);
        std::uint64_t pick = seed;
        worst = std::max(worst, ad::grad_check(
                                    [&](ad::Tape &t, ad::Var x) {
                                        Rng r(pick);
                                        auto fa = phi.features(x), fb = phi.features(t.constant(b));
                                        return infonce_gc(sample_feature_pairs(fa, fb, full_mask(8, 8), 4, r));
                                    },
                                    a, 1e-6));
    }
    EXPECT_LE(worst, 1e-4);
}

} // namespace
} // namespace rnda::objectives
