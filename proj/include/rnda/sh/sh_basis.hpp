// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/ops.hpp>
#include <rnda/core/quaternion.hpp>

#include <array>
#include <cmath>
#include <span>

namespace rnda::sh {

inline constexpr std::size_t kNumCoeffs = 16; // degrees 0..3

using Basis = std::array<double, kNumCoeffs>;

namespace detail {
inline constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
inline constexpr double kC1 = 0.4886025119029199;   // sqrt(3 / 4pi)
inline constexpr double kC2a = 1.0925484305920792;
inline constexpr double kC2b = 0.31539156525252005;
inline constexpr double kC2c = 0.5462742152960396;
inline constexpr double kC3a = 0.5900435899266435;
inline constexpr double kC3b = 2.890611442640554;
inline constexpr double kC3c = 0.4570457994644658;
inline constexpr double kC3d = 0.3731763325901154;
inline constexpr double kC3e = 1.445305721320277;
} // namespace detail

/// Real spherical harmonics Y_0..Y_15 ordered by (l, m), m = -l..l, without
/// the Condon-Shortley phase. Assumes (x, y, z) is unit length.
inline Basis basis_unchecked(double x, double y, double z) {
    using namespace detail;
    return {kC0,
            kC1 * y,
            kC1 * z,
            kC1 * x,
            kC2a * x * y,
            kC2a * y * z,
            kC2b * (3 * z * z - 1),
            kC2a * x * z,
            kC2c * (x * x - y * y),
            kC3a * y * (3 * x * x - y * y),
            kC3b * x * y * z,
            kC3c * y * (5 * z * z - 1),
            kC3d * z * (5 * z * z - 3),
            kC3c * x * (5 * z * z - 1),
            kC3e * z * (x * x - y * y),
            kC3a * x * (x * x - 3 * y * y)};
}

/// Partial derivatives of the polynomial forms above with respect to x, y, z.
/// Only the tangential part is meaningful on the sphere.
inline std::array<Vec3, kNumCoeffs> basis_gradient_unchecked(double x, double y, double z) {
    using namespace detail;
    return {{{0, 0, 0},
             {0, kC1, 0},
             {0, 0, kC1},
             {kC1, 0, 0},
             {kC2a * y, kC2a * x, 0},
             {0, kC2a * z, kC2a * y},
             {0, 0, kC2b * 6 * z},
             {kC2a * z, 0, kC2a * x},
             {kC2c * 2 * x, -kC2c * 2 * y, 0},
             {kC3a * 6 * x * y, kC3a * (3 * x * x - 3 * y * y), 0},
             {kC3b * y * z, kC3b * x * z, kC3b * x * y},
             {0, kC3c * (5 * z * z - 1), kC3c * 10 * y * z},
             {0, 0, kC3d * (15 * z * z - 3)},
             {kC3c * (5 * z * z - 1), 0, kC3c * 10 * x * z},
             {kC3e * 2 * x * z, -kC3e * 2 * y * z, kC3e * (x * x - y * y)},
             {kC3a * (3 * x * x - 3 * y * y), -kC3a * 6 * x * y, 0}}};
}

/// Basis values at a direction; the direction is normalized first.
inline Basis basis(const Vec3 &dir) {
    double n = norm3(dir);
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("sh basis: zero or non-finite direction");
    return basis_unchecked(dir[0] / n, dir[1] / n, dir[2] / n);
}

/// Dot product of 16 coefficients with the basis at `dir`.
inline double reconstruct(std::span<const double> coeffs, const Vec3 &dir) {
    if (coeffs.size() != kNumCoeffs) throw Error("sh reconstruct: expected 16 coefficients");
    Basis b = basis(dir);
    double s = 0.0;
    for (std::size_t j = 0; j < kNumCoeffs; ++j) s += coeffs[j] * b[j];
    return s;
}

namespace ad_ops {
using rnda::ad::InputGrads;
using rnda::ad::InputValues;
using rnda::ad::Tensor;
using rnda::ad::Var;

/// Evaluates per-row SH functions: coeffs (N x C x 16) at unit directions
/// (N x 3), giving N x C. Directions must already be unit length; the
/// direction gradient is projected onto the tangent plane.
inline Var sh_eval(Var coeffs, Var dirs) {
    const auto &sc = coeffs.shape();
    const auto &sd = dirs.shape();
    if (sc.size() != 3 || sc[2] != kNumCoeffs || sd.size() != 2 || sd[1] != 3 || sd[0] != sc[0])
        coeffs.tape().shape_error("sh_eval", "coeffs " + rnda::ad::to_string(sc) + " dirs " + rnda::ad::to_string(sd));
    std::size_t n = sc[0], c = sc[1];
    return coeffs.tape().record(
        "sh_eval", {coeffs, dirs},
        [n, c](InputValues in) {
            Tensor out({n, c});
            for (std::size_t i = 0; i < n; ++i) {
                const double *d = in[1]->data() + 3 * i;
                Basis b = basis_unchecked(d[0], d[1], d[2]);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double *k = in[0]->data() + (i * c + ch) * kNumCoeffs;
                    double s = 0.0;
                    for (std::size_t j = 0; j < kNumCoeffs; ++j) s += k[j] * b[j];
                    out[i * c + ch] = s;
                }
            }
            return out;
        },
        [n, c](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            for (std::size_t i = 0; i < n; ++i) {
                const double *d = in[1]->data() + 3 * i;
                Basis b = basis_unchecked(d[0], d[1], d[2]);
                if (gr[0])
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t j = 0; j < kNumCoeffs; ++j)
                            (*gr[0])[(i * c + ch) * kNumCoeffs + j] += g[i * c + ch] * b[j];
                if (gr[1]) {
                    auto db = basis_gradient_unchecked(d[0], d[1], d[2]);
                    Vec3 gd{0, 0, 0};
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double *k = in[0]->data() + (i * c + ch) * kNumCoeffs;
                        for (std::size_t j = 0; j < kNumCoeffs; ++j)
                            for (int a = 0; a < 3; ++a) gd[a] += g[i * c + ch] * k[j] * db[j][a];
                    }
                    double radial = gd[0] * d[0] + gd[1] * d[1] + gd[2] * d[2];
                    for (int a = 0; a < 3; ++a) (*gr[1])[3 * i + a] += gd[a] - radial * d[a];
                }
            }
        });
}
} // namespace ad_ops

} // namespace rnda::sh
