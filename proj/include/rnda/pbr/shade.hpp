// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/ops.hpp>
#include <rnda/pbr/brdf.hpp>
#include <rnda/sh/light_probe.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>

namespace rnda::pbr {

/// Surface sample being shaded.
struct ShadePoint {
    Vec3 position{0, 0, 0};
    Vec3 normal{0, 0, 1};          ///< unit
    Vec3 view{0, 0, 1};            ///< unit direction toward the camera
    std::array<double, 16> visibility{}; ///< SH coefficients
};

/// Full visibility (1 everywhere) as SH coefficients.
inline std::array<double, 16> full_visibility() {
    std::array<double, 16> v{};
    v[0] = 2.0 * std::sqrt(std::numbers::pi);
    return v;
}

/// Outgoing radiance: sum over probe texels of L * visibility * f * cos * solid angle.
/// Texels below the surface horizon are skipped; accumulation is row-major.
inline Vec3 shade(const ShadePoint &pt, const BrdfParams &params, const sh::LightProbe &probe) {
    const auto &dirs = sh::probe_directions();
    const auto &ytab = sh::probe_sh_table();
    Vec3 out{0, 0, 0};
    double nv = dot3(pt.normal, pt.view);
    if (nv <= 0.0) return out;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const Vec3 &l = dirs[i].direction;
        double nl = dot3(pt.normal, l);
        if (nl <= 0.0) continue;
        double vis = 0.0;
        for (std::size_t j = 0; j < 16; ++j) vis += pt.visibility[j] * ytab[16 * i + j];
        vis = std::clamp(vis, 0.0, 1.0);
        if (vis == 0.0) continue;
        Vec3 f = brdf_eval(params, pt.normal, l, pt.view);
        double w = vis * nl * dirs[i].solid_angle;
        for (int c = 0; c < 3; ++c) out[c] += probe.radiance[3 * i + c] * f[c] * w;
    }
    return out;
}

namespace ad_ops {
using ad::InputGrads;
using ad::InputValues;
using ad::Tensor;
using ad::Var;

/// Differentiable per-Gaussian shading.
/// albedo N x 3, roughness N x 1, normal N x 3 (unit), position N x 3,
/// visibility N x 16, probe 32 x 64 x 3 radiance. Returns N x 3.
/// The view direction of each Gaussian is normalize(eye - position).
inline Var shade(Var albedo, Var roughness, Var normal, Var position, Var visibility, Var probe, const Vec3 &eye,
                 bool specular = true) {
    std::size_t n = albedo.shape().size() == 2 ? albedo.dim(0) : 0;
    if (albedo.shape() != ad::Shape{n, 3} || roughness.shape() != ad::Shape{n, 1} ||
        normal.shape() != ad::Shape{n, 3} || position.shape() != ad::Shape{n, 3} ||
        visibility.shape() != ad::Shape{n, 16} || probe.shape() != ad::Shape{sh::kProbeRows, sh::kProbeCols, 3})
        albedo.tape().shape_error("shade", "albedo " + ad::to_string(albedo.shape()) + " roughness " +
                                               ad::to_string(roughness.shape()) + " normal " +
                                               ad::to_string(normal.shape()) + " position " +
                                               ad::to_string(position.shape()) + " visibility " +
                                               ad::to_string(visibility.shape()) + " probe " +
                                               ad::to_string(probe.shape()));

    // Per-Gaussian quantities shared by the forward and backward sweeps.
    struct Local {
        Vec3 nrm, v;
        double dist, nv;
    };
    auto local = [eye](InputValues in, std::size_t k) {
        Local g;
        const double *nn = in[2]->data() + 3 * k;
        const double *x = in[3]->data() + 3 * k;
        g.nrm = {nn[0], nn[1], nn[2]};
        Vec3 d{eye[0] - x[0], eye[1] - x[1], eye[2] - x[2]};
        g.dist = norm3(d);
        g.v = g.dist > 0.0 ? scale3(d, 1.0 / g.dist) : Vec3{0, 0, 0};
        g.nv = dot3(g.nrm, g.v);
        return g;
    };

    return albedo.tape().record(
        "shade", {albedo, roughness, normal, position, visibility, probe},
        [n, local, specular](InputValues in) {
            const auto &dirs = sh::probe_directions();
            const auto &ytab = sh::probe_sh_table();
            Tensor out({n, 3});
            for (std::size_t k = 0; k < n; ++k) {
                Local g = local(in, k);
                if (g.nv <= 0.0 || g.dist == 0.0) continue;
                const double *a = in[0]->data() + 3 * k;
                const double *vc = in[4]->data() + 16 * k;
                double alpha = (*in[1])[k] * (*in[1])[k];
                double acc[3] = {0, 0, 0};
                for (std::size_t i = 0; i < dirs.size(); ++i) {
                    const Vec3 &l = dirs[i].direction;
                    double nl = dot3(g.nrm, l);
                    if (nl <= 0.0) continue;
                    const double *y = ytab.data() + 16 * i;
                    double vis = 0.0;
                    for (std::size_t j = 0; j < 16; ++j) vis += vc[j] * y[j];
                    vis = std::clamp(vis, 0.0, 1.0);
                    if (vis == 0.0) continue;
                    double s = 0.0;
                    if (specular) {
                        Vec3 h = normalize3(add3(l, g.v));
                        s = specular_lobe(dot3(g.nrm, h), dot3(g.v, h), nl, g.nv, alpha).value;
                    }
                    double w = vis * nl * dirs[i].solid_angle;
                    const double *L = in[5]->data() + 3 * i;
                    for (int c = 0; c < 3; ++c) acc[c] += L[c] * (a[c] / std::numbers::pi + s) * w;
                }
                for (int c = 0; c < 3; ++c) out[3 * k + c] = acc[c];
            }
            return out;
        },
        [n, local, specular](const Tensor &gout, const Tensor &, InputValues in, InputGrads gr) {
            const auto &dirs = sh::probe_directions();
            const auto &ytab = sh::probe_sh_table();
            for (std::size_t k = 0; k < n; ++k) {
                Local g = local(in, k);
                if (g.nv <= 0.0 || g.dist == 0.0) continue;
                const double *go = gout.data() + 3 * k;
                if (go[0] == 0.0 && go[1] == 0.0 && go[2] == 0.0) continue;
                const double *a = in[0]->data() + 3 * k;
                const double *vc = in[4]->data() + 16 * k;
                double gamma = (*in[1])[k];
                double alpha = gamma * gamma;
                Vec3 gn{0, 0, 0}, gv{0, 0, 0};
                double galpha = 0.0;
                for (std::size_t i = 0; i < dirs.size(); ++i) {
                    const Vec3 &l = dirs[i].direction;
                    double nl = dot3(g.nrm, l);
                    if (nl <= 0.0) continue;
                    const double *y = ytab.data() + 16 * i;
                    double raw = 0.0;
                    for (std::size_t j = 0; j < 16; ++j) raw += vc[j] * y[j];
                    double vis = std::clamp(raw, 0.0, 1.0);
                    bool vis_active = raw > 0.0 && raw < 1.0;
                    if (vis == 0.0 && !vis_active) continue;
                    SpecularTerms st;
                    Vec3 h{0, 0, 0};
                    double ulen = 0.0;
                    if (specular) {
                        Vec3 u = add3(l, g.v);
                        ulen = norm3(u);
                        h = scale3(u, 1.0 / ulen);
                        st = specular_lobe(dot3(g.nrm, h), dot3(g.v, h), nl, g.nv, alpha);
                    }
                    double dw = dirs[i].solid_angle;
                    const double *L = in[5]->data() + 3 * i;
                    double GL = 0.0;    // sum_c g_c L_c
                    double Gfull = 0.0; // sum_c g_c L_c (a_c / pi + s)
                    for (int c = 0; c < 3; ++c) {
                        double f = a[c] / std::numbers::pi + st.value;
                        GL += go[c] * L[c];
                        Gfull += go[c] * L[c] * f;
                        if (gr[0]) (*gr[0])[3 * k + c] += go[c] * L[c] * vis * nl * dw / std::numbers::pi;
                        if (gr[5]) (*gr[5])[3 * i + c] += go[c] * vis * f * nl * dw;
                    }
                    if (gr[4] && vis_active)
                        for (std::size_t j = 0; j < 16; ++j) (*gr[4])[16 * k + j] += Gfull * nl * dw * y[j];
                    // derivatives of the shading cosine and of the specular lobe
                    double gnl = Gfull * vis * dw;
                    double gs = GL * vis * nl * dw;
                    for (int c = 0; c < 3; ++c) gn[c] += gnl * l[c];
                    if (specular && gs != 0.0) {
                        double nh = dot3(g.nrm, h), vh = dot3(g.v, h);
                        for (int c = 0; c < 3; ++c) {
                            gn[c] += gs * (st.d_nl * l[c] + st.d_nv * g.v[c] + st.d_nh * h[c]);
                            gv[c] += gs * (st.d_nv * g.nrm[c] + st.d_nh * (g.nrm[c] - nh * h[c]) / ulen +
                                           st.d_vh * (h[c] + (g.v[c] - vh * h[c]) / ulen));
                        }
                        galpha += gs * st.d_alpha;
                    }
                }
                if (gr[1]) (*gr[1])[k] += galpha * 2.0 * gamma;
                if (gr[2])
                    for (int c = 0; c < 3; ++c) (*gr[2])[3 * k + c] += gn[c];
                if (gr[3]) {
                    double gvv = dot3(gv, g.v);
                    for (int c = 0; c < 3; ++c) (*gr[3])[3 * k + c] -= (gv[c] - gvv * g.v[c]) / g.dist;
                }
            }
        });
}

} // namespace ad_ops

} // namespace rnda::pbr
