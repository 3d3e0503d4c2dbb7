// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/quaternion.hpp>
#include <rnda/sh/sh_basis.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

namespace rnda::pbr {

inline constexpr double kMetallic = 0.0;      // dielectric only
inline constexpr double kDielectricF0 = 0.04; // Schlick reflectance at normal incidence

/// Material of one surface point.
struct BrdfParams {
    Vec3 albedo{0.5, 0.5, 0.5}; ///< diffuse color in [0, 1]
    double roughness = 0.5;     ///< perceptual roughness in (0, 1); alpha = roughness^2
    bool specular = true;       ///< false leaves the Lambertian lobe only
};

/// Terms of the microfacet lobe and their partial derivatives.
struct SpecularTerms {
    double value = 0.0; // D * F * V
    double d_nh = 0.0, d_vh = 0.0, d_nl = 0.0, d_nv = 0.0, d_alpha = 0.0;
};

/// GGX distribution, Schlick Fresnel and height-correlated Smith visibility
/// V = G / (4 nl nv), so that the lobe equals D F G / (4 nl nv).
inline SpecularTerms specular_lobe(double nh, double vh, double nl, double nv, double alpha) {
    SpecularTerms t;
    double a2 = alpha * alpha;
    double den = nh * nh * (a2 - 1.0) + 1.0;
    double D = a2 / (std::numbers::pi * den * den);
    double dD_nh = -4.0 * a2 * nh * (a2 - 1.0) / (std::numbers::pi * den * den * den);
    double dD_alpha = 2.0 * alpha / (std::numbers::pi * den * den) * (1.0 - 2.0 * a2 * nh * nh / den);

    double m = 1.0 - vh;
    double m2 = m * m;
    double F = kDielectricF0 + (1.0 - kDielectricF0) * m2 * m2 * m;
    double dF_vh = -5.0 * (1.0 - kDielectricF0) * m2 * m2;

    double A = std::sqrt(nl * nl * (1.0 - a2) + a2);
    double B = std::sqrt(nv * nv * (1.0 - a2) + a2);
    double lambda = nv * A + nl * B;
    double V = 0.5 / lambda;
    double dV_dlambda = -2.0 * V * V;
    double dl_nl = nv * nl * (1.0 - a2) / A + B;
    double dl_nv = A + nl * nv * (1.0 - a2) / B;
    double dl_alpha = nv * alpha * (1.0 - nl * nl) / A + nl * alpha * (1.0 - nv * nv) / B;

    t.value = D * F * V;
    t.d_nh = dD_nh * F * V;
    t.d_vh = D * dF_vh * V;
    t.d_nl = D * F * dV_dlambda * dl_nl;
    t.d_nv = D * F * dV_dlambda * dl_nv;
    t.d_alpha = dD_alpha * F * V + D * F * dV_dlambda * dl_alpha;
    return t;
}

/// Reflectance f(wi, wo) per color channel; zero below either horizon.
inline Vec3 brdf_eval(const BrdfParams &p, const Vec3 &n, const Vec3 &wi, const Vec3 &wo) {
    double nl = dot3(n, wi), nv = dot3(n, wo);
    if (nl <= 0.0 || nv <= 0.0) return {0, 0, 0};
    double spec = 0.0;
    if (p.specular) {
        Vec3 h = normalize3(add3(wi, wo));
        spec = specular_lobe(dot3(n, h), dot3(wo, h), nl, nv, p.roughness * p.roughness).value;
    }
    return {p.albedo[0] / std::numbers::pi + spec, p.albedo[1] / std::numbers::pi + spec,
            p.albedo[2] / std::numbers::pi + spec};
}

/// Visibility toward `dir` from 16 SH coefficients, clamped to [0, 1].
inline double visibility(std::span<const double> coeffs, const Vec3 &dir) {
    return std::clamp(sh::reconstruct(coeffs, dir), 0.0, 1.0);
}

} // namespace rnda::pbr
