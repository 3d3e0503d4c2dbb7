// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#include <rnda/core/grad_check.hpp>
#include <rnda/skinning/skinning_field.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

namespace rnda::skinning {
namespace {

using rnda::testing::random_tensor;

constexpr std::size_t kJ = 4;

SkinningConfig small_config(bool dynamic = true, std::size_t d = 10) {
    SkinningConfig c;
    c.joints = kJ;
    c.window = d;
    c.width = 16;
    c.head_width = 16;
    c.offset_width = 16;
    c.dynamic = dynamic;
    c.offset_cap = 0.02;
    c.output_gain = 1.0;
    return c;
}

ad::Tensor random_encoding(Rng &rng, std::size_t n) {
    ad::Tensor x = random_tensor(rng, {n, 3}, -1.0, 1.0);
    return avatar::positional_encoding(x, {0, 0, 0}, 1.0);
}

ad::Tensor random_theta(Rng &rng, std::size_t d, std::size_t J = kJ) { return random_tensor(rng, {d, J, 3}, -1.0, 1.0); }

ad::Tensor weights_of(const SkinningField &f, const ParamStore &store, const ad::Tensor &enc, const ad::Tensor &theta) {
    ad::Tape tape;
    Binding p(tape, store);
    return skinning_weights(f, p, tape.constant(enc), tape.constant(theta)).value();
}

void zero_prefix(ParamStore &store, const std::string &prefix) {
    for (auto &[name, t] : store.all())
        if (name.rfind(prefix, 0) == 0) t = ad::Tensor::zeros_like(t);
}

JointTransforms random_rigid(Rng &rng, std::size_t J) {
    JointTransforms t({J, 3, 4});
    for (std::size_t k = 0; k < J; ++k) {
        Mat3 r = axis_angle_to_rotmat({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) t[k * 12 + a * 4 + b] = r[a * 3 + b];
            t[k * 12 + a * 4 + 3] = rng.uniform(-1, 1);
        }
    }
    return t;
}

// ---------------------------------------------------------------- poses

TEST(PoseSequence, ValidationRejectsShortWindowsAndLargeAngles) {
    EXPECT_THROW(validate({ad::Tensor({1, 2, 3})}), Error);
    ad::Tensor t({2, 1, 3});
    t[0] = 7.0;
    EXPECT_THROW(validate({t}), Error);
    t[0] = 6.0;
    EXPECT_NO_THROW(validate({t}));
}

TEST(PoseSequence, WindowRepeatsFirstFrameBeforeStart) {
    PoseTrack track{1, {{{0.1, 0, 0}}, {{0.2, 0, 0}}, {{0.3, 0, 0}}}};
    PoseSequence s = window_at(track, 1, 4);
    EXPECT_EQ(s.window(), 4u);
    EXPECT_DOUBLE_EQ(s.theta[0], 0.1);
    EXPECT_DOUBLE_EQ(s.theta[3], 0.1);
    EXPECT_DOUBLE_EQ(s.theta[6], 0.1);
    EXPECT_DOUBLE_EQ(s.theta[9], 0.2);
    EXPECT_DOUBLE_EQ(s.current()[0], 0.2);
}

TEST(PoseFile, RoundTripIsExact) {
    Rng rng(3);
    PoseTrack track{kJ, {}};
    for (int f = 0; f < 7; ++f) {
        std::vector<Vec3> pose(kJ);
        for (auto &aa : pose) aa = {rng.normal(), rng.normal(), rng.normal()};
        track.frames.push_back(pose);
    }
    auto path = std::filesystem::temp_directory_path() / "rnda_pose_roundtrip.txt";
    write_pose_file(path, track);
    EXPECT_EQ(read_pose_file(path), track);
    std::filesystem::remove(path);
}

TEST(PoseFile, MalformedInputThrows) {
    auto path = std::filesystem::temp_directory_path() / "rnda_pose_bad.txt";
    for (const char *text : {"", "x y\n", "2 1\n0 0 0 0 0\n", "1 2\n0 0 0\n", "1 1\n0 0 0 1\n"}) {
        std::ofstream(path) << text;
        EXPECT_THROW(read_pose_file(path), IoError) << text;
    }
    std::filesystem::remove(path);
}

TEST(ForwardKinematics, RestPoseIsIdentity) {
    Skeleton sk{{-1, 0, 1, 0}, {{0, 0, 1}, {0, 0, 1.5}, {0, 0, 2}, {0.3, 0, 1}}};
    JointTransforms t = forward_kinematics(sk, std::vector<Vec3>(4, Vec3{0, 0, 0}));
    EXPECT_EQ(ad::max_abs_diff(t, identity_transforms(4)), 0.0);
}

TEST(ForwardKinematics, ChildFollowsParentAndJointsStayFixed) {
    Skeleton sk{{-1, 0, 1}, {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}}};
    std::vector<Vec3> pose{{0, 0, 0}, {std::numbers::pi / 2, 0, 0}, {0, 0, 0}};
    JointTransforms t = forward_kinematics(sk, pose, {0.5, 0, 0});
    auto apply = [&](std::size_t k, const Vec3 &p) {
        Vec3 o;
        for (int r = 0; r < 3; ++r)
            o[r] = t[k * 12 + r * 4] * p[0] + t[k * 12 + r * 4 + 1] * p[1] + t[k * 12 + r * 4 + 2] * p[2] +
                   t[k * 12 + r * 4 + 3];
        return o;
    };
    // Joint 1 stays at its (translated) rest position; joint 2's origin swings about x.
    Vec3 j1 = apply(1, {0, 0, 1});
    Vec3 j2 = apply(2, {0, 0, 2});
    EXPECT_NEAR(j1[0], 0.5, 1e-12);
    EXPECT_NEAR(j1[2], 1.0, 1e-12);
    EXPECT_NEAR(j2[1], -1.0, 1e-12);
    EXPECT_NEAR(j2[2], 1.0, 1e-12);
    for (std::size_t k = 0; k < 3; ++k) {
        Mat3 r;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) r[a * 3 + b] = t[k * 12 + a * 4 + b];
        EXPECT_NEAR(det3(r), 1.0, 1e-12);
    }
}

TEST(ForwardKinematics, JointCountMismatchThrows) {
    Skeleton sk{{-1, 0}, {{0, 0, 0}, {0, 0, 1}}};
    EXPECT_THROW(forward_kinematics(sk, {{0, 0, 0}}), Error);
}

// ---------------------------------------------------------------- weights

TEST(SkinningWeights, RowsAreOnTheSimplex) {
    for (bool dynamic : {true, false}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            ParamStore store;
            SkinningConfig cfg = small_config(dynamic);
            cfg.output_gain = 5.0;
            SkinningField f = make_skinning_field(store, cfg, seed);
            Rng rng(seed + 100);
            ad::Tensor w = weights_of(f, store, random_encoding(rng, 64), random_theta(rng, 10));
            ASSERT_EQ(w.shape(), (ad::Shape{64, kJ}));
            for (std::size_t i = 0; i < 64; ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < kJ; ++k) {
                    EXPECT_GE(w[i * kJ + k], 0.0);
                    s += w[i * kJ + k];
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(SkinningWeights, ZeroHeadGivesUniformWeights) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 1, /*zero_head=*/true);
    Rng rng(2);
    ad::Tensor w = weights_of(f, store, random_encoding(rng, 20), random_theta(rng, 10));
    for (double v : w.storage()) EXPECT_NEAR(v, 1.0 / kJ, 1e-15);
}

TEST(SkinningWeights, PriorLogitsShiftTheArgmax) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 1, true);
    f.prior_logits = ad::Tensor({3, kJ});
    for (std::size_t i = 0; i < 3; ++i) f.prior_logits[i * kJ + i] = 10.0;
    Rng rng(2);
    ad::Tensor w = weights_of(f, store, random_encoding(rng, 3), random_theta(rng, 10));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_GT(w[i * kJ + i], 0.99);
}

TEST(SkinningWeights, HistoryChangesDynamicWeights) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ParamStore store;
        SkinningField f = make_skinning_field(store, small_config(), seed);
        Rng rng(seed + 7);
        ad::Tensor enc = random_encoding(rng, 16);
        ad::Tensor theta = random_theta(rng, 10);
        ad::Tensor other = theta;
        for (std::size_t i = 0; i < kJ * 3; ++i) other[i] += 0.5; // earliest frame only
        EXPECT_GT(ad::max_abs_diff(weights_of(f, store, enc, theta), weights_of(f, store, enc, other)), 1e-8);
    }
}

TEST(SkinningWeights, StaticWeightsIgnorePoses) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(false), 4);
    Rng rng(5);
    ad::Tensor enc = random_encoding(rng, 16);
    EXPECT_EQ(ad::max_abs_diff(weights_of(f, store, enc, random_theta(rng, 10)),
                               weights_of(f, store, enc, random_theta(rng, 10))),
              0.0);
}

TEST(SkinningWeights, ShortWindowAndWrongShapesThrow) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 0);
    Rng rng(1);
    ad::Tensor enc = random_encoding(rng, 4);
    EXPECT_THROW(weights_of(f, store, enc, random_theta(rng, 1)), Error);
    EXPECT_THROW(weights_of(f, store, enc, random_theta(rng, 9)), ShapeError);
    EXPECT_THROW(weights_of(f, store, enc, random_theta(rng, 10, 3)), ShapeError);
    ParamStore s2;
    SkinningConfig bad = small_config();
    bad.window = 1;
    EXPECT_THROW(make_skinning_field(s2, bad, 0), Error);
}

TEST(SkinningWeights, NonFiniteLogitsThrow) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 0);
    f.prior_logits = ad::Tensor({2, kJ});
    f.prior_logits[0] = std::numeric_limits<double>::infinity();
    Rng rng(1);
    EXPECT_THROW(weights_of(f, store, random_encoding(rng, 2), random_theta(rng, 10)), NumericError);
}

TEST(TemporalFeature, PermutingGaussiansPermutesRows) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 3);
    Rng rng(9);
    ad::Tensor enc = random_encoding(rng, 6);
    ad::Tensor theta = random_theta(rng, 10);
    std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
    ad::Tape tape;
    Binding p(tape, store);
    ad::Var e = tape.constant(enc);
    ad::Var th = tape.constant(theta);
    ad::Tensor a = temporal_feature(f, p, th, position_feature(f, p, e)).value();
    ad::Var ep = ad::gather_rows(e, perm);
    ad::Tensor b = temporal_feature(f, p, th, position_feature(f, p, ep)).value();
    std::size_t w = f.cfg.width;
    ASSERT_EQ(a.shape(), (ad::Shape{6, w}));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < w; ++c) EXPECT_NEAR(b[i * w + c], a[perm[i] * w + c], 1e-14);
}

TEST(SpatialFeature, DependsOnlyOnPoseDifference) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 3);
    Rng rng(11);
    ad::Tape tape;
    Binding p(tape, store);
    ad::Var fx = position_feature(f, p, tape.constant(random_encoding(rng, 8)));
    ad::Tensor cur = random_tensor(rng, {kJ, 3}), prev = random_tensor(rng, {kJ, 3}), c = random_tensor(rng, {kJ, 3});
    ad::Tensor cur2 = cur, prev2 = prev;
    for (std::size_t i = 0; i < cur.size(); ++i) {
        cur2[i] += c[i];
        prev2[i] += c[i];
    }
    ad::Tensor a = spatial_feature(f, p, tape.constant(cur), tape.constant(prev), fx).value();
    ad::Tensor b = spatial_feature(f, p, tape.constant(cur2), tape.constant(prev2), fx).value();
    EXPECT_LT(ad::max_abs_diff(a, b), 1e-12);
    // Identical poses equal the zero-motion baseline.
    ad::Tensor z0 = spatial_feature(f, p, tape.constant(cur), tape.constant(cur), fx).value();
    ad::Tensor z1 = spatial_feature(f, p, tape.constant(ad::Tensor({kJ, 3})), tape.constant(ad::Tensor({kJ, 3})), fx).value();
    EXPECT_EQ(ad::max_abs_diff(z0, z1), 0.0);
    EXPECT_THROW(spatial_feature(f, p, tape.constant(cur), tape.constant(ad::Tensor({kJ - 1, 3})), fx), ShapeError);
}

// ---------------------------------------------------------------- blending

TEST(BlendTransforms, OneHotSelectsJointExactly) {
    Rng rng(4);
    JointTransforms t = random_rigid(rng, kJ);
    for (std::size_t k = 0; k < kJ; ++k) {
        std::vector<double> w(kJ, 0.0);
        w[k] = 1.0;
        BlendedTransform b = blend_transforms(w, t);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) EXPECT_EQ(b.rotation[r * 3 + c], t[k * 12 + r * 4 + c]);
            EXPECT_EQ(b.translation[r], t[k * 12 + r * 4 + 3]);
        }
    }
}

TEST(BlendTransforms, IdentityJointsGiveIdentity) {
    std::vector<double> w{0.1, 0.2, 0.3, 0.4};
    BlendedTransform b = blend_transforms(w, identity_transforms(kJ));
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(b.rotation[r * 3 + c], r == c ? 1.0 : 0.0, 1e-15);
        EXPECT_EQ(b.translation[r], 0.0);
    }
}

TEST(BlendTransforms, OppositeQuarterTurnsAverageToDegenerateMatrix) {
    JointTransforms t({2, 3, 4});
    Mat3 rp = axis_angle_to_rotmat({0, 0, std::numbers::pi / 2});
    Mat3 rm = axis_angle_to_rotmat({0, 0, -std::numbers::pi / 2});
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            t[a * 4 + b] = rp[a * 3 + b];
            t[12 + a * 4 + b] = rm[a * 3 + b];
        }
    std::vector<double> w{0.5, 0.5};
    BlendedTransform b = blend_transforms(w, t);
    Mat3 expect{0, 0, 0, 0, 0, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(b.rotation[i], expect[i], 1e-15);
    EXPECT_THROW(blend_transforms(std::vector<double>{1.0}, t), Error);
}

// ---------------------------------------------------------------- deform

struct Canon {
    ad::Tensor pos, quat, scale, normal;
};

Canon random_canon(Rng &rng, std::size_t n) {
    Canon c{random_tensor(rng, {n, 3}), ad::Tensor({n, 4}), random_tensor(rng, {n, 3}, 0.01, 0.1), ad::Tensor({n, 3})};
    for (std::size_t i = 0; i < n; ++i) {
        Quaternion q = Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        c.quat[4 * i] = q.w;
        c.quat[4 * i + 1] = q.x;
        c.quat[4 * i + 2] = q.y;
        c.quat[4 * i + 3] = q.z;
        Vec3 u = rnda::testing::random_unit(rng);
        for (int k = 0; k < 3; ++k) c.normal[3 * i + k] = u[k];
    }
    return c;
}

ad::Tensor simplex_rows(Rng &rng, std::size_t n, std::size_t J) {
    ad::Tensor w({n, J});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < J; ++k) s += (w[i * J + k] = rng.uniform(0.0, 1.0));
        for (std::size_t k = 0; k < J; ++k) w[i * J + k] /= s;
    }
    return w;
}

Posed deform_const(ad::Tape &tape, const Canon &c, const ad::Tensor &w, const ad::Tensor &joints) {
    return deform(tape.constant(c.pos), tape.constant(c.quat), tape.constant(c.scale), tape.constant(c.normal),
                  tape.constant(w), tape.constant(joints));
}

TEST(Deform, IdentityJointsAreAFixpoint) {
    Rng rng(8);
    Canon c = random_canon(rng, 30);
    ad::Tape tape;
    Posed p = deform_const(tape, c, simplex_rows(rng, 30, kJ), identity_transforms(kJ));
    EXPECT_EQ(p.position.value(), c.pos);
    EXPECT_EQ(p.normal.value(), c.normal);
    ad::Tensor r = ad::quat_to_rotmat(tape.constant(c.quat)).value();
    EXPECT_LT(ad::max_abs_diff(p.rotation.value(), r), 1e-15);
}

TEST(Deform, PureTranslationShiftsPositionsOnly) {
    Rng rng(9);
    Canon c = random_canon(rng, 20);
    JointTransforms t = identity_transforms(kJ);
    Vec3 T{0.3, -1.25, 2.0};
    for (std::size_t k = 0; k < kJ; ++k)
        for (int r = 0; r < 3; ++r) t[k * 12 + r * 4 + 3] = T[r];
    ad::Tape tape;
    Posed p = deform_const(tape, c, simplex_rows(rng, 20, kJ), t);
    for (std::size_t i = 0; i < 20; ++i)
        for (int k = 0; k < 3; ++k) {
            EXPECT_NEAR(p.position.value()[3 * i + k], c.pos[3 * i + k] + T[k], 1e-14);
            EXPECT_NEAR(p.normal.value()[3 * i + k], c.normal[3 * i + k], 1e-15);
        }
}

TEST(Deform, RigidRotationPreservesDistancesAndUnitNormals) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t n = 40;
        Canon c = random_canon(rng, n);
        JointTransforms one = random_rigid(rng, 1);
        JointTransforms t({kJ, 3, 4});
        for (std::size_t k = 0; k < kJ; ++k) std::copy_n(one.data(), 12, t.data() + 12 * k);
        ad::Tape tape;
        Posed p = deform_const(tape, c, simplex_rows(rng, n, kJ), t);
        const ad::Tensor &x = p.position.value();
        for (std::size_t i = 0; i < n; ++i) {
            double nn = 0.0;
            for (int k = 0; k < 3; ++k) nn += std::pow(p.normal.value()[3 * i + k], 2);
            EXPECT_NEAR(std::sqrt(nn), 1.0, 1e-12);
            for (std::size_t j = i + 1; j < n; ++j) {
                double d0 = 0.0, d1 = 0.0;
                for (int k = 0; k < 3; ++k) {
                    d0 += std::pow(c.pos[3 * i + k] - c.pos[3 * j + k], 2);
                    d1 += std::pow(x[3 * i + k] - x[3 * j + k], 2);
                }
                EXPECT_NEAR(std::sqrt(d0), std::sqrt(d1), 1e-12);
            }
        }
    }
}

TEST(Deform, CovarianceIsConjugatedByBlend) {
    Rng rng(12);
    Canon c = random_canon(rng, 5);
    JointTransforms t = random_rigid(rng, kJ);
    ad::Tensor w = simplex_rows(rng, 5, kJ);
    ad::Tape tape;
    Posed p = deform_const(tape, c, w, t);
    ad::Tensor cov0 = avatar::covariance(ad::quat_to_rotmat(tape.constant(c.quat)), tape.constant(c.scale)).value();
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> row(w.data() + i * kJ, w.data() + (i + 1) * kJ);
        Mat3 A = blend_transforms(row, t).rotation, S;
        std::copy_n(cov0.data() + 9 * i, 9, S.begin());
        Mat3 expect = matmul3(matmul3(A, S), transpose3(A));
        for (int k = 0; k < 9; ++k) EXPECT_NEAR(p.covariance.value()[9 * i + k], expect[k], 1e-13);
    }
}

// ---------------------------------------------------------------- offsets

TEST(Offsets, ZeroNetworkGivesZeroOffsets) {
    ParamStore store;
    SkinningField f = make_skinning_field(store, small_config(), 0);
    zero_prefix(store, "offsets.");
    Rng rng(3);
    ad::Tape tape;
    Binding p(tape, store);
    Offsets o = nonrigid_offsets(f, p, tape.constant(random_encoding(rng, 9)), tape.constant(random_tensor(rng, {kJ, 3})));
    for (double v : o.dx.value().storage()) EXPECT_EQ(v, 0.0);
    for (double v : o.dr.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Offsets, DisplacementStaysWithinCap) {
    ParamStore store;
    SkinningConfig cfg = small_config();
    cfg.output_gain = 50.0;
    SkinningField f = make_skinning_field(store, cfg, 5);
    Rng rng(4);
    ad::Tape tape;
    Binding p(tape, store);
    double worst = 0.0;
    for (int batch = 0; batch < 10; ++batch) {
        Offsets o = nonrigid_offsets(f, p, tape.constant(random_encoding(rng, 1000)),
                                     tape.constant(random_tensor(rng, {kJ, 3}, -3, 3)));
        for (double v : o.dx.value().storage()) worst = std::max(worst, std::abs(v));
    }
    EXPECT_LE(worst, cfg.offset_cap);
    EXPECT_GT(worst, 0.5 * cfg.offset_cap);
}

// ---------------------------------------------------------------- gradients

struct GradFixture {
    ParamStore store;
    SkinningField field;
    Canon canon;
    ad::Tensor enc, theta, joints, probe;
};

GradFixture grad_fixture(std::uint64_t seed, bool dynamic = true) {
    GradFixture g;
    SkinningConfig cfg = small_config(dynamic, 3);
    cfg.width = 8;
    cfg.head_width = 8;
    cfg.offset_width = 8;
    g.field = make_skinning_field(g.store, cfg, seed);
    Rng rng(seed * 31 + 1);
    const std::size_t n = 5;
    g.canon = random_canon(rng, n);
    g.enc = random_encoding(rng, n);
    g.theta = random_theta(rng, 3);
    g.joints = random_rigid(rng, kJ);
    g.probe = random_tensor(rng, {n, 3});
    return g;
}

// Scalar of posed positions and normals, built on the fixture's field.
ad::Var posed_objective(GradFixture &g, ad::Tape &tape, Binding &p, ad::Var theta) {
    ad::Var enc = tape.constant(g.enc);
    std::size_t d = g.theta.dim(0);
    ad::Var w = skinning_weights(g.field, p, enc, theta);
    ad::Var cur = ad::reshape(ad::slice(theta, 0, d - 1, d), {kJ, 3});
    Offsets o = nonrigid_offsets(g.field, p, enc, cur);
    Posed posed = deform(tape.constant(g.canon.pos), tape.constant(g.canon.quat), tape.constant(g.canon.scale),
                         tape.constant(g.canon.normal), w, tape.constant(g.joints), &o);
    ad::Var probe = tape.constant(g.probe);
    return ad::add(ad::add(ad::sum(ad::mul(posed.position, probe)), ad::sum(ad::mul(posed.normal, probe))),
                   ad::sum(posed.covariance));
}

TEST(SkinningGradients, PoseSequenceMatchesFiniteDifferences) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        GradFixture g = grad_fixture(seed);
        double err = ad::grad_check(
            [&](ad::Tape &tape, ad::Var theta) {
                Binding p(tape, g.store);
                return posed_objective(g, tape, p, theta);
            },
            g.theta, 1e-6);
        worst = std::max(worst, err);
    }
    EXPECT_LE(worst, 1e-4);
}

// Gradient check of one named parameter through the full deformation.
double param_grad_error(GradFixture &g, const std::string &name) {
    return ad::grad_check(
        [&](ad::Tape &tape, ad::Var v) {
            Binding p(tape, g.store);
            p.set(name, v);
            return posed_objective(g, tape, p, tape.constant(g.theta));
        },
        g.store.at(name), 1e-6);
}

TEST(SkinningGradients, EncoderParametersMatchFiniteDifferences) {
    const std::vector<std::string> names{"skinning.temporal.wq",  "skinning.temporal.embed", "skinning.spatial.wv",
                                         "skinning.cross_temporal.wq", "skinning.cross_spatial.wq",
                                         "skinning.position.w0", "skinning.head.w1",         "skinning.head.b1",
                                         "offsets.w0",            "offsets.w2",              "offsets.b2"};
    for (const auto &name : names) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            GradFixture g = grad_fixture(seed);
            worst = std::max(worst, param_grad_error(g, name));
        }
        EXPECT_LE(worst, 1e-4) << name;
    }
}

TEST(SkinningGradients, JointTransformsMatchFiniteDifferences) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        GradFixture g = grad_fixture(seed);
        double err = ad::grad_check(
            [&](ad::Tape &tape, ad::Var joints) {
                Binding p(tape, g.store);
                ad::Var enc = tape.constant(g.enc);
                ad::Var w = skinning_weights(g.field, p, enc, tape.constant(g.theta));
                Posed posed = deform(tape.constant(g.canon.pos), tape.constant(g.canon.quat),
                                     tape.constant(g.canon.scale), tape.constant(g.canon.normal), w, joints);
                return ad::add(ad::sum(ad::mul(posed.position, tape.constant(g.probe))), ad::sum(posed.covariance));
            },
            g.joints, 1e-6);
        worst = std::max(worst, err);
    }
    EXPECT_LE(worst, 1e-4);
}

// ---------------------------------------------------------------- cost

TEST(EncoderFlops, IncreasesWithWindowLength) {
    SkinningConfig cfg;
    for (std::size_t d = 2; d < 40; ++d)
        EXPECT_LT(encoder_flops(d, cfg).pose_encoder, encoder_flops(d + 1, cfg).pose_encoder);
}

TEST(EncoderFlops, DoublingTheWindowRoughlyDoublesPoseEncoderCost) {
    SkinningConfig cfg;
    double ratio = static_cast<double>(encoder_flops(20, cfg).pose_encoder) /
                   static_cast<double>(encoder_flops(10, cfg).pose_encoder);
    EXPECT_GE(ratio, 1.5);
    EXPECT_LE(ratio, 2.5);
}

TEST(EncoderFlops, ClosedFormMatchesInstrumentedForward) {
    for (bool dynamic : {true, false}) {
        SkinningConfig cfg;
        cfg.dynamic = dynamic;
        ParamStore store;
        SkinningField f = make_skinning_field(store, cfg, 2);
        Rng rng(6);
        const std::size_t n = 37;
        ad::Tensor enc = random_encoding(rng, n), theta = random_theta(rng, cfg.window);
        ad::Tape tape;
        Binding p(tape, store);
        ad::Var e = tape.constant(enc), th = tape.constant(theta);
        std::uint64_t before = ad::g_mac_count;
        skinning_weights(f, p, e, th);
        std::uint64_t counted = ad::g_mac_count - before;
        EXPECT_EQ(counted, encoder_flops(cfg.window, cfg).total(n)) << "dynamic=" << dynamic;
    }
}

} // namespace
} // namespace rnda::skinning
