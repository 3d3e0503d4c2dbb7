// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/gaussian_avatar.hpp>
#include <rnda/avatar/mlp.hpp>
#include <rnda/avatar/params.hpp>
#include <rnda/core/ops.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/skinning/pose.hpp>

#include <cmath>
#include <cstdint>
#include <string>

namespace rnda::skinning {

struct SkinningConfig {
    std::size_t joints = 4;
    std::size_t window = 10;        ///< d, poses per sequence
    std::size_t width = 64;         ///< attention feature width
    std::size_t head_width = 64;
    std::size_t offset_width = 64;
    bool dynamic = true;            ///< false: weights depend on position only
    double offset_cap = 0.01;       ///< bound on |dx| per axis (meters)
    double output_gain = 0.1;
};

/// Parameters of the skinning-weight encoder and the non-rigid offset network.
/// Names are prefixed "skinning." and "offsets.".
struct SkinningField {
    SkinningConfig cfg;
    Mlp position;  ///< encoding -> f_x
    Mlp head;      ///< [f_t, f_s] (or f_x when static) -> J logits
    Mlp offsets;   ///< [encoding, current pose] -> (dx, dr)
    ad::Tensor prior_logits; ///< N x J added to the head output; empty when unused

    static std::string temporal(const char *p) { return std::string("skinning.temporal.") + p; }
    static std::string spatial(const char *p) { return std::string("skinning.spatial.") + p; }
};

inline void init_projection(ParamStore &store, Rng &rng, const std::string &w, const std::string &b,
                            std::size_t in, std::size_t out) {
    double lim = std::sqrt(6.0 / static_cast<double>(in + out));
    ad::Tensor W({in, out});
    for (double &v : W.values()) v = rng.uniform(-lim, lim);
    store.add(w, std::move(W));
    if (!b.empty()) store.add(b, ad::Tensor({1, out}));
}

/// Creates the field's parameters in `store`. `zero_head` zeroes the head network.
inline SkinningField make_skinning_field(ParamStore &store, const SkinningConfig &cfg, std::uint64_t seed,
                                         bool zero_head = false) {
    if (cfg.window < 2) throw Error("skinning window must be at least 2");
    if (cfg.joints < 1) throw Error("skinning needs at least one joint");
    SkinningField f;
    f.cfg = cfg;
    std::size_t w = cfg.width, J = cfg.joints;
    f.position = Mlp{"skinning.position", {avatar::kEncodingWidth, w, w}};
    f.head = Mlp{"skinning.head", {cfg.dynamic ? 2 * w : w, cfg.head_width, J}};
    f.offsets = Mlp{"offsets", {avatar::kEncodingWidth + 3 * J, cfg.offset_width, cfg.offset_width, 7}};
    Rng rng(seed);
    f.position.init(store, rng);
    if (zero_head)
        f.head.init_zero(store);
    else
        f.head.init(store, rng);
    f.offsets.init(store, rng, cfg.output_gain);
    if (cfg.dynamic) {
        for (const char *p : {"q", "k", "v"}) {
            init_projection(store, rng, SkinningField::temporal((std::string("w") + p).c_str()),
                            SkinningField::temporal((std::string("b") + p).c_str()), 3 * cfg.window, w);
            init_projection(store, rng, SkinningField::spatial((std::string("w") + p).c_str()),
                            SkinningField::spatial((std::string("b") + p).c_str()), 3, w);
        }
        ad::Tensor et({J, w}), es({J, w});
        for (double &v : et.values()) v = rng.normal(0.0, 0.5);
        for (double &v : es.values()) v = rng.normal(0.0, 0.5);
        store.add(SkinningField::temporal("embed"), std::move(et));
        store.add(SkinningField::spatial("embed"), std::move(es));
        init_projection(store, rng, "skinning.cross_temporal.wq", "", w, w);
        init_projection(store, rng, "skinning.cross_spatial.wq", "", w, w);
    }
    return f;
}

/// Per-Gaussian position feature f_x (N x width).
inline ad::Var position_feature(const SkinningField &f, const Binding &p, ad::Var encoding) {
    return ad::tanh(f.position.forward(p, encoding));
}

namespace detail {
// Single-layer self-attention over joint tokens (J x in): tokens are
// projected to Q, K, V; the joint embedding tags Q and K.
inline ad::Var joint_attention(ad::Var tokens, ad::Var embed, ad::Var wq, ad::Var bq, ad::Var wk, ad::Var bk, ad::Var wv, ad::Var bv) {
    ad::Var q = ad::add(ad::add(ad::matmul(tokens, wq), bq), embed);
    ad::Var k = ad::add(ad::add(ad::matmul(tokens, wk), bk), embed);
    ad::Var v = ad::add(ad::matmul(tokens, wv), bv);
    return ad::attention(q, k, v);
}
} // namespace detail

/// Temporal self-attention over joint tokens built from the whole window:
/// f_p = J x (3 d). Returns J x width.
inline ad::Var temporal_tokens(const SkinningField &f, const Binding &p, ad::Var theta) {
    const ad::Shape &s = theta.shape();
    if (s.size() != 3 || s[2] != 3) theta.tape().shape_error("temporal_feature", "theta " + ad::to_string(s));
    if (s[0] < 2) throw Error("temporal feature needs a window of at least 2 poses");
    if (s[0] != f.cfg.window || s[1] != f.cfg.joints)
        theta.tape().shape_error("temporal_feature", "theta " + ad::to_string(s) + " does not match the field");
    std::size_t d = s[0], J = s[1];
    ad::Var fp = ad::reshape(ad::transpose(ad::reshape(theta, {d, 3 * J})), {J, 3 * d});
    using F = SkinningField;
    return detail::joint_attention(fp, p(F::temporal("embed")), p(F::temporal("wq")), p(F::temporal("bq")),
                                   p(F::temporal("wk")), p(F::temporal("bk")), p(F::temporal("wv")),
                                   p(F::temporal("bv")));
}

/// Spatial self-attention over per-joint pose differences theta_t - theta_{t-1}.
inline ad::Var spatial_tokens(const SkinningField &f, const Binding &p, ad::Var current, ad::Var previous) {
    if (current.shape() != previous.shape())
        current.tape().shape_error("spatial_feature", "joint count mismatch " + ad::to_string(current.shape()) +
                                                          " vs " + ad::to_string(previous.shape()));
    if (current.shape() != ad::Shape{f.cfg.joints, 3})
        current.tape().shape_error("spatial_feature", "pose " + ad::to_string(current.shape()));
    using F = SkinningField;
    return detail::joint_attention(ad::sub(current, previous), p(F::spatial("embed")),
                                   p(F::spatial("wq")), p(F::spatial("bq")), p(F::spatial("wk")),
                                   p(F::spatial("bk")), p(F::spatial("wv")), p(F::spatial("bv")));
}

/// Cross-attention of per-Gaussian queries f_x W_q against joint features,
/// added back onto f_x so the result still carries the position feature.
inline ad::Var cross_feature(const Binding &p, const std::string &wq, ad::Var fx, ad::Var joint_features) {
    return ad::add(fx, ad::attention(ad::matmul(fx, p(wq)), joint_features, joint_features));
}

/// f_t: N x width.
inline ad::Var temporal_feature(const SkinningField &f, const Binding &p, ad::Var theta, ad::Var fx) {
    return cross_feature(p, "skinning.cross_temporal.wq", fx, temporal_tokens(f, p, theta));
}

/// f_s: N x width.
inline ad::Var spatial_feature(const SkinningField &f, const Binding &p, ad::Var current, ad::Var previous,
                               ad::Var fx) {
    return cross_feature(p, "skinning.cross_spatial.wq", fx, spatial_tokens(f, p, current, previous));
}

/// Skinning weights W (N x J), rows on the simplex.
inline ad::Var skinning_weights(const SkinningField &f, const Binding &p, ad::Var encoding, ad::Var theta) {
    ad::Var fx = position_feature(f, p, encoding);
    ad::Var feat = fx;
    if (f.cfg.dynamic) {
        std::size_t d = theta.dim(0), J = theta.dim(1);
        ad::Var cur = ad::reshape(ad::slice(theta, 0, d - 1, d), {J, 3});
        ad::Var prev = ad::reshape(ad::slice(theta, 0, d - 2, d - 1), {J, 3});
        feat = ad::concat({temporal_feature(f, p, theta, fx), spatial_feature(f, p, cur, prev, fx)}, 1);
    }
    ad::Var logits = f.head.forward(p, feat);
    if (!f.prior_logits.empty()) logits = ad::add(logits, p.tape().constant(f.prior_logits));
    if (!logits.value().all_finite()) throw NumericError("non-finite skinning logits");
    return ad::softmax(logits);
}

/// Non-rigid offsets from position and the current pose.
struct Offsets {
    ad::Var dx; ///< N x 3, |dx_i| <= cap per axis
    ad::Var dr; ///< N x 4 quaternion increment
};

inline Offsets nonrigid_offsets(const SkinningField &f, const Binding &p, ad::Var encoding, ad::Var current) {
    std::size_t n = encoding.dim(0), J = f.cfg.joints;
    if (current.shape() != ad::Shape{J, 3})
        current.tape().shape_error("nonrigid_offsets", "pose " + ad::to_string(current.shape()));
    ad::Var pose_rows = ad::gather_rows(ad::reshape(current, {1, 3 * J}), std::vector<std::size_t>(n, 0));
    ad::Var raw = f.offsets.forward(p, ad::concat({encoding, pose_rows}, 1));
    double cap = f.cfg.offset_cap;
    return {ad::scale(ad::tanh(ad::scale(ad::slice(raw, 1, 0, 3), 1.0 / cap)), cap), ad::slice(raw, 1, 3, 7)};
}

/// Blended transform of one Gaussian: sum_k W_k theta_k on 3 x 4 matrices.
struct BlendedTransform {
    Mat3 rotation{};
    Vec3 translation{};
};

inline BlendedTransform blend_transforms(std::span<const double> weights, const JointTransforms &joints) {
    if (joints.rank() != 3 || joints.dim(1) != 3 || joints.dim(2) != 4 || weights.size() != joints.dim(0))
        throw Error("blend_transforms: weights and joint transforms disagree");
    BlendedTransform b;
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        total += weights[k];
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) b.rotation[r * 3 + c] += weights[k] * joints[k * 12 + r * 4 + c];
            b.translation[r] += weights[k] * joints[k * 12 + r * 4 + 3];
        }
    }
    if (total != 1.0) {
        for (double &v : b.rotation) v /= total;
        for (double &v : b.translation) v /= total;
    }
    return b;
}

/// Per-Gaussian blended 3 x 4 transforms, sum_k w_ik theta_k / sum_k w_ik.
/// Dividing by the row sum (1 up to rounding) keeps identity joints an
/// exact fixpoint. weights N x J, joints J x 3 x 4; returns N x 3 x 4.
inline ad::Var blend_matrices(ad::Var weights, ad::Var joints) {
    std::size_t n = weights.dim(0), J = weights.dim(1);
    return weights.tape().record(
        "blend_matrices", {weights, joints},
        [n, J](ad::InputValues in) {
            const ad::Tensor &w = *in[0], &t = *in[1];
            ad::Tensor out({n, 3, 4});
            for (std::size_t i = 0; i < n; ++i) {
                double *a = out.data() + 12 * i, total = 0.0;
                for (std::size_t k = 0; k < J; ++k) {
                    double wk = w[i * J + k];
                    total += wk;
                    for (int e = 0; e < 12; ++e) a[e] += wk * t[k * 12 + e];
                }
                if (total != 1.0)
                    for (int e = 0; e < 12; ++e) a[e] /= total;
            }
            return out;
        },
        [n, J](const ad::Tensor &g, const ad::Tensor &out, ad::InputValues in, ad::InputGrads gr) {
            const ad::Tensor &w = *in[0], &t = *in[1];
            for (std::size_t i = 0; i < n; ++i) {
                double total = 0.0;
                for (std::size_t k = 0; k < J; ++k) total += w[i * J + k];
                const double *gi = g.data() + 12 * i, *ai = out.data() + 12 * i;
                for (std::size_t k = 0; k < J; ++k) {
                    if (gr[0]) {
                        double d = 0.0;
                        for (int e = 0; e < 12; ++e) d += gi[e] * (t[k * 12 + e] - ai[e]);
                        (*gr[0])[i * J + k] += d / total;
                    }
                    if (gr[1])
                        for (int e = 0; e < 12; ++e) (*gr[1])[k * 12 + e] += gi[e] * w[i * J + k] / total;
                }
            }
        });
}

/// Posed Gaussians in world space.
struct Posed {
    ad::Var position;   ///< N x 3
    ad::Var rotation;   ///< N x 3 x 3, A_R R(r_c + dr)
    ad::Var normal;     ///< N x 3 unit
    ad::Var covariance; ///< N x 3 x 3
};

/// Linear blend skinning of canonical Gaussians with optional offsets.
inline Posed deform(ad::Var positions, ad::Var rotation, ad::Var scale, ad::Var normal, ad::Var weights,
                    ad::Var joints, const Offsets *offsets = nullptr) {
    std::size_t n = positions.dim(0), J = joints.dim(0);
    if (weights.shape() != ad::Shape{n, J} || joints.shape() != ad::Shape{J, 3, 4})
        positions.tape().shape_error("deform", "weights " + ad::to_string(weights.shape()) + " joints " +
                                                   ad::to_string(joints.shape()));
    ad::Var A = blend_matrices(weights, joints);
    ad::Var AR = ad::slice(A, 2, 0, 3);
    ad::Var AT = ad::slice(A, 2, 3, 4);
    ad::Var x = offsets ? ad::add(positions, offsets->dx) : positions;
    ad::Var q = offsets ? ad::add(rotation, offsets->dr) : rotation;
    Posed out;
    out.position = ad::reshape(ad::add(ad::bmm(AR, ad::reshape(x, {n, 3, 1})), AT), {n, 3});
    out.rotation = ad::bmm(AR, ad::quat_to_rotmat(q));
    out.normal = ad::normalize(ad::reshape(ad::bmm(AR, ad::reshape(normal, {n, 3, 1})), {n, 3}), {0, 0, 1});
    out.covariance = avatar::covariance(out.rotation, scale);
    return out;
}

/// Multiply-add counts of the skinning-weight encoder's forward pass.
struct FlopCount {
    std::uint64_t pose_encoder = 0; ///< temporal and spatial joint attention (independent of N)
    std::uint64_t per_gaussian = 0; ///< position feature, cross-attention and head, per Gaussian

    std::uint64_t total(std::size_t gaussians) const { return pose_encoder + gaussians * per_gaussian; }
};

inline FlopCount encoder_flops(std::size_t d, const SkinningConfig &cfg) {
    std::uint64_t J = cfg.joints, w = cfg.width, h = cfg.head_width;
    FlopCount c;
    std::uint64_t pos = avatar::kEncodingWidth * w + w * w;
    if (!cfg.dynamic) {
        c.per_gaussian = pos + w * h + h * J;
        return c;
    }
    std::uint64_t temporal = 3 * J * (3 * d) * w + 2 * J * J * w;
    std::uint64_t spatial = 3 * J * 3 * w + 2 * J * J * w;
    c.pose_encoder = temporal + spatial;
    c.per_gaussian = pos + 2 * (w * w + 2 * J * w) + 2 * w * h + h * J;
    return c;
}

/// Rest-pose joint transforms (identity rotations, zero translations).
inline JointTransforms identity_transforms(std::size_t J) {
    JointTransforms t({J, 3, 4});
    for (std::size_t k = 0; k < J; ++k)
        for (int r = 0; r < 3; ++r) t[k * 12 + r * 4 + r] = 1.0;
    return t;
}

} // namespace rnda::skinning
