// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#include <rnda/core/grad_check.hpp>
#include <rnda/sh/light_probe.hpp>
#include <rnda/sh/sh_basis.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

namespace rnda::sh {
namespace {

using rnda::testing::random_tensor;

Vec3 random_direction(Rng &rng) {
    double z = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double r = std::sqrt(1.0 - z * z);
    return {r * std::cos(phi), r * std::sin(phi), z};
}

TEST(ShBasis, ConstantTerm) {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_NEAR(basis(random_direction(rng))[0], 0.28209479, 1e-8);
}

TEST(ShBasis, LinearZTermAtPole) { EXPECT_NEAR(basis({0, 0, 1})[2], 0.48860251, 1e-8); }

TEST(ShBasis, ZeroDirectionThrows) { EXPECT_THROW(basis({0, 0, 0}), Error); }

TEST(ShBasis, MonteCarloOrthonormality) {
    Rng rng(2024);
    constexpr int kSamples = 1'000'000;
    std::array<std::array<double, kNumCoeffs>, kNumCoeffs> gram{};
    for (int s = 0; s < kSamples; ++s) {
        Basis b = basis(random_direction(rng));
        for (std::size_t i = 0; i < kNumCoeffs; ++i)
            for (std::size_t j = i; j < kNumCoeffs; ++j) gram[i][j] += b[i] * b[j];
    }
    for (std::size_t i = 0; i < kNumCoeffs; ++i)
        for (std::size_t j = i; j < kNumCoeffs; ++j)
            EXPECT_NEAR(4.0 * std::numbers::pi * gram[i][j] / kSamples, i == j ? 1.0 : 0.0, 0.02) << i << "," << j;
}

TEST(ShBasis, ReconstructDcTerm) {
    std::vector<double> c(kNumCoeffs, 0.0);
    c[0] = 2.0 * std::sqrt(std::numbers::pi);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) EXPECT_NEAR(reconstruct(c, random_direction(rng)), 1.0, 1e-14);
    std::vector<double> zero(kNumCoeffs, 0.0);
    EXPECT_EQ(reconstruct(zero, {0.3, 0.4, 0.5}), 0.0);
}

TEST(ShBasis, ReconstructIsLinear) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(kNumCoeffs), b(kNumCoeffs), s(kNumCoeffs);
        for (std::size_t j = 0; j < kNumCoeffs; ++j) {
            a[j] = rng.normal();
            b[j] = rng.normal();
            s[j] = 2.0 * a[j] - 0.5 * b[j];
        }
        Vec3 d = random_direction(rng);
        EXPECT_NEAR(reconstruct(s, d), 2.0 * reconstruct(a, d) - 0.5 * reconstruct(b, d), 1e-12);
    }
}

// Clamped cosine max(0, w.z): its degree-3 projection has the closed form
// (pi/2 Y00, 2pi/3 Y10, pi/8 Y20, 0 Y30) in zonal terms, which reconstructs
// to 1/4 + 1/2 + 5/16 + 0 = 1.0625 at +z.
TEST(ShBasis, ClampedCosineProjectionAtPole) {
    Rng rng(31);
    constexpr int kSamples = 1'000'000;
    Basis c{};
    for (int s = 0; s < kSamples; ++s) {
        Vec3 d = random_direction(rng);
        Basis b = basis(d);
        double f = std::max(0.0, d[2]);
        for (std::size_t j = 0; j < kNumCoeffs; ++j) c[j] += f * b[j];
    }
    for (double &v : c) v *= 4.0 * std::numbers::pi / kSamples;
    EXPECT_NEAR(reconstruct(c, {0, 0, 1}), 1.0625, 0.01);

    Basis q = project_quadrature([](const Vec3 &d) { return std::max(0.0, d[2]); });
    EXPECT_NEAR(reconstruct(q, {0, 0, 1}), 1.0625, 5e-3);
}

TEST(ShBasis, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        ad::Tensor coeffs = random_tensor(rng, {3, 2, kNumCoeffs});
        ad::Tensor dirs({3, 3});
        for (std::size_t i = 0; i < 3; ++i) {
            Vec3 d = random_direction(rng);
            for (int k = 0; k < 3; ++k) dirs.at(i, k) = d[k];
        }
        ad::Tensor w = random_tensor(rng, {3, 2});
        auto by_coeffs = [&](ad::Tape &t, ad::Var c) {
            return ad::sum(ad::mul(ad_ops::sh_eval(c, t.constant(dirs)), t.constant(w)));
        };
        EXPECT_LE(ad::grad_check(by_coeffs, coeffs), 1e-4);
        // Directions enter through normalize so the tangent projection is exercised.
        auto by_dirs = [&](ad::Tape &t, ad::Var d) {
            return ad::sum(ad::mul(ad_ops::sh_eval(t.constant(coeffs), ad::normalize(d)), t.constant(w)));
        };
        EXPECT_LE(ad::grad_check(by_dirs, dirs), 1e-4);
    }
}

TEST(LightProbe, SolidAnglesSumToSphere) {
    double total = 0.0;
    for (const auto &t : probe_directions()) total += t.solid_angle;
    EXPECT_NEAR(total, 4.0 * std::numbers::pi, 1e-9);
}

TEST(LightProbe, EquatorialTexelsAreLarger) {
    const auto &dirs = probe_directions();
    EXPECT_GT(dirs[15 * kProbeCols].solid_angle, dirs[0].solid_angle);
    EXPECT_GT(dirs[16 * kProbeCols].solid_angle, dirs[31 * kProbeCols].solid_angle);
}

TEST(LightProbe, CosineHemisphereQuadrature) {
    double s = 0.0;
    for (const auto &t : probe_directions()) s += std::max(0.0, t.direction[2]) * t.solid_angle;
    EXPECT_NEAR(s / std::numbers::pi, 1.0, 0.005);
}

TEST(LightProbe, ConstantProbeSamplesConstant) {
    LightProbe p = LightProbe::constant(0.2, 0.4, 0.6);
    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        Vec3 c = probe_sample(p, random_direction(rng));
        EXPECT_EQ(c[0], 0.2);
        EXPECT_EQ(c[1], 0.4);
        EXPECT_EQ(c[2], 0.6);
    }
}

TEST(LightProbe, SingleLitTexel) {
    LightProbe p = LightProbe::constant(0, 0, 0);
    std::size_t row = 10, col = 37;
    p.radiance[3 * (row * kProbeCols + col)] = 5.0;
    Rng rng(7);
    for (int i = 0; i < 20000; ++i) {
        Vec3 d = random_direction(rng);
        auto [r, c] = probe_texel_of(d);
        EXPECT_EQ(probe_sample(p, d)[0] != 0.0, r == row && c == col);
    }
    EXPECT_EQ(probe_sample(p, probe_directions()[row * kProbeCols + col].direction)[0], 5.0);
}

TEST(LightProbe, TexelDirectionsRoundTrip) {
    const auto &dirs = probe_directions();
    for (std::size_t i = 0; i < kProbeRows; ++i)
        for (std::size_t j = 0; j < kProbeCols; ++j) {
            auto [r, c] = probe_texel_of(dirs[i * kProbeCols + j].direction);
            EXPECT_EQ(r, i);
            EXPECT_EQ(c, j);
        }
}

TEST(LightProbe, FileRoundTrip) {
    Rng rng(12);
    LightProbe p;
    for (double &v : p.radiance.values()) v = static_cast<float>(rng.uniform(0.0, 3.0));
    auto path = std::filesystem::temp_directory_path() / "rnda_probe_roundtrip.pfm";
    save_probe(path, p);
    EXPECT_TRUE(std::filesystem::exists(probe_sidecar_path(path)));
    LightProbe q = load_probe(path);
    EXPECT_EQ(p.radiance, q.radiance);
    std::filesystem::remove(path);
    std::filesystem::remove(probe_sidecar_path(path));
}

TEST(LightProbe, RejectsWrongSize) {
    auto path = std::filesystem::temp_directory_path() / "rnda_probe_bad.pfm";
    io::write_pfm(path, io::FloatImage{8, 8, 3, std::vector<float>(192, 1.0f)});
    EXPECT_THROW(load_probe(path), IoError);
    std::filesystem::remove(path);
}

TEST(Pfm, TruncatedFileThrows) {
    auto path = std::filesystem::temp_directory_path() / "rnda_trunc.pfm";
    {
        std::ofstream out(path, std::ios::binary);
        out << "PF\n4 4\n-1.0\n" << "abc";
    }
    EXPECT_THROW(io::read_pfm(path), IoError);
    std::filesystem::remove(path);
}

TEST(Pfm, RowOrderAndChannelsRoundTrip) {
    io::FloatImage img{3, 2, 1, {1, 2, 3, 4, 5, 6}};
    auto path = std::filesystem::temp_directory_path() / "rnda_gray.pfm";
    io::write_pfm(path, img);
    EXPECT_EQ(io::read_pfm(path), img);
    std::filesystem::remove(path);
}

} // namespace
} // namespace rnda::sh
