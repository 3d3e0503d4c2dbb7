// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/mlp.hpp>
#include <rnda/avatar/params.hpp>
#include <rnda/core/ops.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/core/rng.hpp>
#include <rnda/sh/sh_basis.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

namespace rnda::avatar {

inline constexpr std::size_t kOctaves = 6;
inline constexpr std::size_t kEncodingWidth = 3 + 6 * kOctaves; // 39
inline constexpr std::size_t kGeometryOutputs = 11;             // opacity 1, quaternion 4, log-scale 3, normal 3
inline constexpr std::size_t kColorCoeffs = 3 * sh::kNumCoeffs;

struct AvatarConfig {
    std::size_t width = 128;         ///< hidden width of the geometry and appearance networks
    std::size_t geometry_layers = 4; ///< linear layers of the geometry network
    std::size_t appearance_layers = 3;
    std::size_t visibility_width = 64;
    double scale_cap_fraction = 0.1; ///< of the template bounding-box diagonal
    double init_opacity = 0.9;
    double init_scale = 0.0;         ///< 0 derives it from the vertex spacing
    double init_visibility = 0.95;
    double output_gain = 0.1;        ///< shrinks the last layer so outputs start near their biases
    bool zero_init = false;          ///< all network weights and biases zero
};

/// Frequency encoding of positions normalized into [-1, 1]:
/// [u, sin(2^k pi u), cos(2^k pi u)] for k < kOctaves.
inline ad::Tensor positional_encoding(const ad::Tensor &x, const Vec3 &center, double half_extent) {
    std::size_t n = x.dim(0);
    ad::Tensor out({n, kEncodingWidth});
    for (std::size_t i = 0; i < n; ++i) {
        double *o = out.data() + i * kEncodingWidth;
        double u[3];
        for (int c = 0; c < 3; ++c) u[c] = (x[3 * i + c] - center[c]) / half_extent;
        for (int c = 0; c < 3; ++c) o[c] = u[c];
        for (std::size_t k = 0; k < kOctaves; ++k) {
            double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
            for (int c = 0; c < 3; ++c) {
                o[3 + 6 * k + c] = std::sin(f * u[c]);
                o[6 + 6 * k + c] = std::cos(f * u[c]);
            }
        }
    }
    return out;
}

/// Canonical-space Gaussians whose attributes are decoded from positions by
/// small networks.
struct GaussianAvatar {
    ad::Tensor positions;     ///< N x 3 canonical centers
    ad::Tensor encoding;      ///< N x 39
    ad::Tensor normal_prior;  ///< N x 3, added to the decoded normal before normalization (zeros if none)
    Vec3 center{0, 0, 0};
    double half_extent = 1.0;
    double scale_cap = 0.1;
    ParamStore params;
    Mlp geometry, material, color, visibility;

    std::size_t size() const { return positions.dim(0); }
    bool has_color() const { return params.has_prefix(color.prefix + "."); }

    /// Drops the view-dependent color network.
    void remove_color() { params.erase_prefix(color.prefix + "."); }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Builds an avatar whose Gaussians sit at the template vertices.
/// `normals` (optional, N x 3) bias the decoded normals.
inline GaussianAvatar init_from_template(const std::vector<Vec3> &vertices, const std::vector<Vec3> &normals = {},
                                         const AvatarConfig &cfg = {}, std::uint64_t seed = 0) {
    if (vertices.empty()) throw Error("init_from_template: empty vertex list");
    if (!normals.empty() && normals.size() != vertices.size())
        throw Error("init_from_template: normals and vertices differ in count");
    std::size_t n = vertices.size();
    GaussianAvatar av;
    av.positions = ad::Tensor({n, 3});
    Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
            std::numeric_limits<double>::max()};
    Vec3 hi{-lo[0], -lo[1], -lo[2]};
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            double v = vertices[i][c];
            if (!std::isfinite(v)) throw Error("init_from_template: non-finite vertex coordinate");
            av.positions[3 * i + c] = v;
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
    double diag = norm3(sub3(hi, lo));
    if (diag < 1e-9) diag = 1.0;
    av.center = scale3(add3(lo, hi), 0.5);
    av.half_extent = 0.5 * std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    if (av.half_extent < 1e-9) av.half_extent = 1.0;
    av.scale_cap = cfg.scale_cap_fraction * diag;
    av.encoding = positional_encoding(av.positions, av.center, av.half_extent);
    av.normal_prior = ad::Tensor({n, 3});
    for (std::size_t i = 0; i < normals.size(); ++i)
        for (int c = 0; c < 3; ++c) av.normal_prior[3 * i + c] = normals[i][c];

    std::vector<std::size_t> hidden_g(cfg.geometry_layers - 1, cfg.width);
    av.geometry.prefix = "geometry";
    av.geometry.widths = {kEncodingWidth};
    av.geometry.widths.insert(av.geometry.widths.end(), hidden_g.begin(), hidden_g.end());
    av.geometry.widths.push_back(kGeometryOutputs);
    std::vector<std::size_t> hidden_a(cfg.appearance_layers - 1, cfg.width);
    av.material.prefix = "material";
    av.material.widths = {kEncodingWidth};
    av.material.widths.insert(av.material.widths.end(), hidden_a.begin(), hidden_a.end());
    av.material.widths.push_back(4);
    av.color.prefix = "color";
    av.color.widths = {kEncodingWidth};
    av.color.widths.insert(av.color.widths.end(), hidden_a.begin(), hidden_a.end());
    av.color.widths.push_back(kColorCoeffs);
    av.visibility.prefix = "visibility";
    av.visibility.widths = {kEncodingWidth + 3, cfg.visibility_width, cfg.visibility_width, sh::kNumCoeffs};

    if (cfg.zero_init) {
        for (const Mlp *m : {&av.geometry, &av.material, &av.color, &av.visibility}) m->init_zero(av.params);
        return av;
    }
    Rng rng(seed);
    for (const Mlp *m : {&av.geometry, &av.material, &av.color, &av.visibility})
        m->init(av.params, rng, cfg.output_gain);

    double s0 = cfg.init_scale;
    if (s0 <= 0.0) {
        // mean nearest-neighbour spacing over a strided subset
        double acc = 0.0;
        std::size_t cnt = 0;
        std::size_t stride = std::max<std::size_t>(1, n / 200);
        for (std::size_t i = 0; i < n && n > 1; i += stride) {
            double best = std::numeric_limits<double>::max();
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) best = std::min(best, norm3(sub3(vertices[i], vertices[j])));
            acc += best;
            ++cnt;
        }
        s0 = cnt ? 0.7 * acc / static_cast<double>(cnt) : 0.01 * diag;
        if (!(s0 > 0.0)) s0 = 0.01 * diag;
    }
    s0 = std::min(s0, 0.5 * av.scale_cap);
    double ls = std::log(s0);
    av.geometry.set_output_bias(av.params, {logit(cfg.init_opacity), 1, 0, 0, 0, ls, ls, ls, 0, 0,
                                            normals.empty() ? 1.0 : 0.0});
    std::vector<double> color_bias(kColorCoeffs, 0.0);
    for (int c = 0; c < 3; ++c) color_bias[c * sh::kNumCoeffs] = 0.5 / sh::detail::kC0;
    av.color.set_output_bias(av.params, color_bias);
    std::vector<double> vis_bias(sh::kNumCoeffs, 0.0);
    vis_bias[0] = cfg.init_visibility / sh::detail::kC0;
    av.visibility.set_output_bias(av.params, vis_bias);
    return av;
}

/// Decoded geometry of every Gaussian.
struct Geometry {
    ad::Var opacity;   ///< N x 1 in (0, 1)
    ad::Var rotation;  ///< N x 4 unit quaternion
    ad::Var scale;     ///< N x 3, capped
    ad::Var raw_scale; ///< N x 3, before the cap
    ad::Var normal;    ///< N x 3 unit
};

/// Decoded appearance of every Gaussian.
struct Appearance {
    ad::Var color;      ///< N x 3 x 16 SH coefficients; invalid once removed
    ad::Var albedo;     ///< N x 3 in [0, 1]
    ad::Var roughness;  ///< N x 1 in (0, 1)
    ad::Var visibility; ///< N x 16 SH coefficients
};

inline Geometry encode_geometry(const GaussianAvatar &av, const Binding &p) {
    ad::Tape &t = p.tape();
    ad::Var raw = av.geometry.forward(p, t.constant(av.encoding));
    Geometry g;
    g.opacity = ad::sigmoid(ad::slice(raw, 1, 0, 1));
    g.rotation = ad::normalize(ad::slice(raw, 1, 1, 5), {1, 0, 0, 0});
    g.raw_scale = ad::exp(ad::slice(raw, 1, 5, 8));
    g.scale = ad::minimum(g.raw_scale, av.scale_cap);
    g.normal = ad::normalize(ad::add(ad::slice(raw, 1, 8, 11), t.constant(av.normal_prior)), {0, 0, 1});
    return g;
}

/// Appearance attributes; `normal` (N x 3) feeds the visibility network.
inline Appearance encode_appearance(const GaussianAvatar &av, const Binding &p, ad::Var normal) {
    ad::Tape &t = p.tape();
    ad::Var enc = t.constant(av.encoding);
    std::size_t n = av.size();
    Appearance a;
    ad::Var mat = av.material.forward(p, enc);
    a.albedo = ad::sigmoid(ad::slice(mat, 1, 0, 3));
    a.roughness = ad::sigmoid(ad::slice(mat, 1, 3, 4));
    if (av.has_color()) a.color = ad::reshape(av.color.forward(p, enc), {n, 3, sh::kNumCoeffs});
    a.visibility = av.visibility.forward(p, ad::concat({enc, normal}, 1));
    return a;
}

/// Sigma = R S S^T R^T for a unit quaternion and per-axis scales.
inline Mat3 covariance(const Quaternion &q, const Vec3 &s) {
    Mat3 r = quat_to_rotmat(q);
    Mat3 out{};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += r[a * 3 + k] * s[k] * s[k] * r[b * 3 + k];
            out[a * 3 + b] = v;
        }
    return out;
}

/// Batched covariance from rotation matrices (N x 3 x 3) and scales (N x 3).
inline ad::Var covariance(ad::Var rotation, ad::Var scale) {
    std::size_t n = scale.dim(0);
    ad::Var m = ad::mul(rotation, ad::reshape(scale, {n, 1, 3}));
    return ad::bmm(m, ad::transpose(m));
}

} // namespace rnda::avatar
