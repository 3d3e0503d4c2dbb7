// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/gaussian_avatar.hpp>
#include <rnda/core/grad_check.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/core/rng.hpp>
#include <rnda/objectives/losses.hpp>
#include <rnda/pbr/shade.hpp>
#include <rnda/raster/rasterize.hpp>
#include <rnda/render/render.hpp>
#include <rnda/sh/sh_basis.hpp>
#include <rnda/skinning/skinning_field.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace rnda::eval {

/// Worst relative finite-difference error of one differentiable path over
/// a number of random configurations.
struct GradPathResult {
    std::string path;
    std::size_t configurations = 0;
    double max_error = 0.0;
    double seconds = 0.0;
};

namespace gradsuite {

inline ad::Tensor uniform(Rng &rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
    ad::Tensor t(std::move(shape));
    for (double &v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline Vec3 unit(Rng &rng) {
    double z = rng.uniform(-1.0, 1.0), phi = rng.uniform(0.0, 2.0 * std::numbers::pi), r = std::sqrt(1.0 - z * z);
    return {r * std::cos(phi), r * std::sin(phi), z};
}

/// Random-weighted sum, so every output element contributes.
inline ad::Var weighted(ad::Tape &t, ad::Var v, Rng &rng) { return ad::sum(ad::mul(v, t.constant(uniform(rng, v.shape())))); }

inline std::vector<std::size_t> some_coords(Rng &rng, std::size_t size, std::size_t k) {
    if (size <= k) return {};
    std::vector<std::size_t> c(k);
    for (auto &i : c) i = rng.index(size);
    return c;
}

/// Checks every stored parameter whose name starts with `prefix`.
inline double check_params(const ParamStore &store, const std::string &prefix, std::uint64_t seed,
                           const std::function<ad::Var(ad::Tape &, Binding &)> &objective, double step) {
    double worst = 0.0;
    std::size_t checked = 0;
    Rng rng(seed);
    for (const auto &[name, value] : store.all()) {
        if (name.rfind(prefix, 0) != 0) continue;
        ++checked;
        auto coords = some_coords(rng, value.size(), 6);
        const std::string &n = name;
        worst = std::max(worst, ad::grad_check(
                                    [&](ad::Tape &t, ad::Var x) {
                                        Binding p(t, store, [](const std::string &) { return false; });
                                        p.set(n, x);
                                        return objective(t, p);
                                    },
                                    value, step, coords));
    }
    if (checked == 0) throw Error("gradient suite: no parameters named " + prefix + "*");
    return worst;
}

// ---------------------------------------------------------------- avatar

inline avatar::GaussianAvatar small_avatar(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec3> v(8);
    for (auto &p : v) p = {rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(0.0, 1.6)};
    avatar::AvatarConfig cfg;
    cfg.width = 12;
    cfg.geometry_layers = 3;
    cfg.appearance_layers = 3;
    cfg.visibility_width = 12;
    return avatar::init_from_template(v, {}, cfg, seed);
}

inline double geometry_encoder(std::uint64_t seed) {
    avatar::GaussianAvatar av = small_avatar(seed);
    return check_params(av.params, "geometry.", seed, [&](ad::Tape &t, Binding &p) {
        Rng w(seed + 7);
        avatar::Geometry g = encode_geometry(av, p);
        return ad::add(ad::add(weighted(t, g.opacity, w), weighted(t, g.scale, w)),
                       ad::add(weighted(t, g.rotation, w), weighted(t, g.normal, w)));
    }, 1e-5);
}

inline double appearance_encoder(std::uint64_t seed) {
    avatar::GaussianAvatar av = small_avatar(seed);
    double worst = 0.0;
    for (const char *prefix : {"material.", "visibility.", "color."})
        worst = std::max(worst, check_params(av.params, prefix, seed, [&](ad::Tape &t, Binding &p) {
            Rng w(seed + 11);
            avatar::Geometry g = encode_geometry(av, p);
            avatar::Appearance a = encode_appearance(av, p, g.normal);
            return ad::add(ad::add(weighted(t, a.albedo, w), weighted(t, a.roughness, w)),
                           ad::add(weighted(t, a.visibility, w), weighted(t, a.color, w)));
        }, 1e-5));
    return worst;
}

// ---------------------------------------------------------------- skinning

struct SkinningFixture {
    ParamStore store;
    skinning::SkinningField field;
    ad::Tensor pos, quat, scale, normal, enc, theta, joints, probe;
};

inline constexpr std::size_t kSuiteJoints = 4;

inline SkinningFixture skinning_fixture(std::uint64_t seed) {
    SkinningFixture f;
    skinning::SkinningConfig cfg;
    cfg.joints = kSuiteJoints;
    cfg.window = 3;
    cfg.width = 8;
    cfg.head_width = 8;
    cfg.offset_width = 8;
    cfg.offset_cap = 0.02;
    cfg.output_gain = 1.0;
    f.field = skinning::make_skinning_field(f.store, cfg, seed);
    Rng rng(seed * 31 + 1);
    const std::size_t n = 5;
    f.pos = uniform(rng, {n, 3});
    f.quat = ad::Tensor({n, 4});
    f.scale = uniform(rng, {n, 3}, 0.01, 0.1);
    f.normal = ad::Tensor({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        Quaternion q = Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        f.quat[4 * i] = q.w;
        f.quat[4 * i + 1] = q.x;
        f.quat[4 * i + 2] = q.y;
        f.quat[4 * i + 3] = q.z;
        Vec3 u = unit(rng);
        for (int k = 0; k < 3; ++k) f.normal[3 * i + k] = u[k];
    }
    f.enc = avatar::positional_encoding(uniform(rng, {n, 3}), {0, 0, 0}, 1.0);
    f.theta = uniform(rng, {3, kSuiteJoints, 3});
    f.joints = ad::Tensor({kSuiteJoints, 3, 4});
    for (std::size_t k = 0; k < kSuiteJoints; ++k) {
        Mat3 r = axis_angle_to_rotmat({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) f.joints[k * 12 + a * 4 + b] = r[a * 3 + b];
            f.joints[k * 12 + a * 4 + 3] = rng.uniform(-1, 1);
        }
    }
    f.probe = uniform(rng, {n, 3});
    return f;
}

inline ad::Var posed_objective(const SkinningFixture &f, ad::Tape &t, const Binding &p, ad::Var theta,
                               ad::Var joints) {
    ad::Var enc = t.constant(f.enc);
    std::size_t d = f.theta.dim(0);
    ad::Var w = skinning::skinning_weights(f.field, p, enc, theta);
    ad::Var cur = ad::reshape(ad::slice(theta, 0, d - 1, d), {kSuiteJoints, 3});
    skinning::Offsets o = skinning::nonrigid_offsets(f.field, p, enc, cur);
    skinning::Posed posed = skinning::deform(t.constant(f.pos), t.constant(f.quat), t.constant(f.scale),
                                             t.constant(f.normal), w, joints, &o);
    ad::Var probe = t.constant(f.probe);
    return ad::add(ad::add(ad::sum(ad::mul(posed.position, probe)), ad::sum(ad::mul(posed.normal, probe))),
                   ad::sum(posed.covariance));
}

inline double skinning_encoder(std::uint64_t seed) {
    SkinningFixture f = skinning_fixture(seed);
    double worst = check_params(f.store, "skinning.", seed, [&](ad::Tape &t, Binding &p) {
        return posed_objective(f, t, p, t.constant(f.theta), t.constant(f.joints));
    }, 1e-6);
    return std::max(worst, ad::grad_check(
                               [&](ad::Tape &t, ad::Var theta) {
                                   Binding p(t, f.store);
                                   return posed_objective(f, t, p, theta, t.constant(f.joints));
                               },
                               f.theta, 1e-6));
}

inline double offsets_and_deformation(std::uint64_t seed) {
    SkinningFixture f = skinning_fixture(seed);
    double worst = check_params(f.store, "offsets.", seed, [&](ad::Tape &t, Binding &p) {
        return posed_objective(f, t, p, t.constant(f.theta), t.constant(f.joints));
    }, 1e-6);
    return std::max(worst, ad::grad_check(
                               [&](ad::Tape &t, ad::Var joints) {
                                   Binding p(t, f.store);
                                   return posed_objective(f, t, p, t.constant(f.theta), joints);
                               },
                               f.joints, 1e-6));
}

// ---------------------------------------------------------------- shading

/// Shading inputs whose normals stay off the probe-texel horizon kinks.
struct ShadeFixture {
    ad::Tensor albedo, roughness, normal, position, vis, probe;
    Vec3 eye{0, 0, 3};
};

inline ShadeFixture shade_fixture(Rng &rng, std::size_t n) {
    for (;;) {
        ShadeFixture s{ad::Tensor({n, 3}), ad::Tensor({n, 1}), ad::Tensor({n, 3}), ad::Tensor({n, 3}),
                       ad::Tensor({n, 16}), ad::Tensor({sh::kProbeRows, sh::kProbeCols, 3})};
        bool ok = true;
        for (std::size_t k = 0; k < n; ++k) {
            for (int c = 0; c < 3; ++c) {
                s.albedo[3 * k + c] = rng.uniform(0.1, 0.9);
                s.position[3 * k + c] = rng.uniform(-0.3, 0.3);
            }
            s.roughness[k] = rng.uniform(0.3, 0.9);
            Vec3 nn = normalize3({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 1.0});
            for (int c = 0; c < 3; ++c) s.normal[3 * k + c] = nn[c];
            s.vis[16 * k] = 0.5 / sh::detail::kC0;
            for (std::size_t j = 1; j < 16; ++j) s.vis[16 * k + j] = rng.uniform(-0.1, 0.1);
            for (const auto &t : sh::probe_directions())
                if (std::abs(dot3(nn, t.direction)) < 1e-4) ok = false;
        }
        for (double &v : s.probe.values()) v = rng.uniform(0.0, 2.0);
        if (ok) return s;
    }
}

/// Gradient of the shaded color with respect to inputs `which` (indices
/// into albedo, roughness, normal, position, visibility, probe).
inline double shade_inputs(std::uint64_t seed, std::initializer_list<int> which) {
    Rng rng(seed);
    ShadeFixture s = shade_fixture(rng, 2);
    ad::Tensor w = uniform(rng, {2, 3});
    bool spec = seed % 5 != 0;
    const ad::Tensor *points[6] = {&s.albedo, &s.roughness, &s.normal, &s.position, &s.vis, &s.probe};
    double worst = 0.0;
    for (int k : which) {
        auto coords = k == 5 ? some_coords(rng, s.probe.size(), 24) : std::vector<std::size_t>{};
        worst = std::max(worst, ad::grad_check(
                                    [&](ad::Tape &t, ad::Var x) {
                                        std::array<ad::Var, 6> in = {t.constant(s.albedo),   t.constant(s.roughness),
                                                                     t.constant(s.normal),   t.constant(s.position),
                                                                     t.constant(s.vis),      t.constant(s.probe)};
                                        in[k] = k == 2 ? ad::normalize(x) : x;
                                        return ad::sum(ad::mul(
                                            pbr::ad_ops::shade(in[0], in[1], in[2], in[3], in[4], in[5], s.eye, spec),
                                            t.constant(w)));
                                    },
                                    *points[k], 1e-5, coords));
    }
    return worst;
}

inline double sh_evaluation(std::uint64_t seed) {
    Rng rng(seed);
    ad::Tensor coeffs = uniform(rng, {3, 2, sh::kNumCoeffs}), dirs({3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        Vec3 d = unit(rng);
        for (int k = 0; k < 3; ++k) dirs.at(i, k) = d[k];
    }
    ad::Tensor w = uniform(rng, {3, 2});
    double a = ad::grad_check(
        [&](ad::Tape &t, ad::Var c) { return ad::sum(ad::mul(sh::ad_ops::sh_eval(c, t.constant(dirs)), t.constant(w))); },
        coeffs);
    double b = ad::grad_check(
        [&](ad::Tape &t, ad::Var d) {
            return ad::sum(ad::mul(sh::ad_ops::sh_eval(t.constant(coeffs), ad::normalize(d)), t.constant(w)));
        },
        dirs);
    return std::max(a, b);
}

// ---------------------------------------------------------------- rasterizer

struct SplatFixture {
    ad::Tensor means, cov, opacity, payload;
};

inline SplatFixture random_splats(Rng &rng, std::size_t n) {
    SplatFixture s{ad::Tensor({n, 3}), ad::Tensor({n, 3, 3}), ad::Tensor({n, 1}), ad::Tensor({n, 3})};
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) s.means[3 * i + k] = rng.uniform(-0.5, 0.5);
        Quaternion q = Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        Mat3 r = quat_to_rotmat(q);
        Vec3 sc{rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double v = 0.0;
                for (int k = 0; k < 3; ++k) v += r[a * 3 + k] * sc[k] * sc[k] * r[b * 3 + k];
                s.cov[9 * i + 3 * a + b] = v;
            }
        s.opacity[i] = rng.uniform(0.05, 0.99);
        for (int c = 0; c < 3; ++c) s.payload[3 * i + c] = rng.uniform(0.0, 1.0);
    }
    return s;
}

/// True when no splat-pixel alpha sits near the cutoff and no two depths
/// nearly tie, so central differences stay clear of compositing jumps.
inline bool smooth_for_differences(const SplatFixture &s, const raster::Camera &cam) {
    const double margin = 2e-5, gap = 1e-4;
    std::vector<double> depths;
    for (std::size_t i = 0; i < s.means.dim(0); ++i) {
        Vec3 m{s.means[3 * i], s.means[3 * i + 1], s.means[3 * i + 2]};
        Mat3 cv;
        std::copy_n(s.cov.data() + 9 * i, 9, cv.begin());
        auto p = raster::detail::project_one(m, cv, s.opacity[i], cam);
        if (!p) continue;
        if (std::abs(p->t[2] - raster::kNearPlane) < gap) return false;
        depths.push_back(p->t[2]);
        for (std::size_t y = 0; y < cam.height; ++y)
            for (std::size_t x = 0; x < cam.width; ++x) {
                double g;
                double a = raster::detail::splat_alpha(s.opacity[i], p->ka, p->kb, p->kc, x - p->mx, y - p->my, g);
                if (std::abs(a - raster::kMinAlpha) < margin) return false;
            }
    }
    std::sort(depths.begin(), depths.end());
    for (std::size_t i = 1; i < depths.size(); ++i)
        if (depths[i] - depths[i - 1] < gap) return false;
    return true;
}

inline raster::Camera suite_camera(std::size_t size) {
    double f = 1.2 * static_cast<double>(size);
    return raster::Camera::look_at({0, -4, 0}, {0, 0, 0}, {0, 0, 1}, f, f, size, size);
}

inline double rasterizer(std::uint64_t seed) {
    raster::Camera cam = suite_camera(16);
    Rng rng(seed);
    SplatFixture s = random_splats(rng, 5);
    while (!smooth_for_differences(s, cam)) s = random_splats(rng, 5);
    ad::Tensor w = uniform(rng, {16, 16, 4});
    std::array<const ad::Tensor *, 4> pts{&s.means, &s.cov, &s.opacity, &s.payload};
    double worst = 0.0;
    for (int k = 0; k < 4; ++k)
        worst = std::max(worst, ad::grad_check(
                                    [&](ad::Tape &t, ad::Var x) {
                                        std::array<ad::Var, 4> in{t.constant(s.means), t.constant(s.cov),
                                                                  t.constant(s.opacity), t.constant(s.payload)};
                                        in[k] = x;
                                        return ad::sum(ad::mul(raster::ad_ops::rasterize(in[0], in[1], in[2], in[3], cam),
                                                               t.constant(w)));
                                    },
                                    *pts[k]));
    return worst;
}

// ---------------------------------------------------------------- losses

inline ad::Tensor all_ones(std::size_t h, std::size_t w) { return ad::Tensor({h, w}, 1.0); }

inline ad::Tensor unit_rows(Rng &rng, std::size_t n, std::size_t d) {
    ad::Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += std::pow(t[i * d + k] = rng.normal(), 2);
        for (std::size_t k = 0; k < d; ++k) t[i * d + k] /= std::sqrt(s);
    }
    return t;
}

inline double image_losses(std::uint64_t seed) {
    Rng rng(seed + 50);
    ad::Tensor gt = uniform(rng, {6, 6, 3}, 0, 1), pr = uniform(rng, {6, 6, 3}, 0, 1);
    ad::Tensor mask = objectives::foreground_mask(uniform(rng, {6, 6}, -0.5, 1));
    double a = ad::grad_check([&](ad::Tape &t, ad::Var x) { return objectives::l1_image(t.constant(gt), x, mask); },
                              pr, 1e-8);
    double b = ad::grad_check(
        [&](ad::Tape &t, ad::Var x) { return objectives::normal_loss(t.constant(gt), x, all_ones(6, 6)); }, pr, 1e-8);
    return std::max(a, b);
}

inline double perceptual_loss(std::uint64_t seed, const objectives::FeatureExtractor &phi) {
    Rng rng(seed + 100);
    ad::Tensor a = uniform(rng, {8, 8, 3}, 0, 1), b = uniform(rng, {8, 8, 3}, 0, 1);
    return ad::grad_check([&](ad::Tape &t, ad::Var x) { return objectives::perceptual(phi, t.constant(a), x); }, b,
                          1e-6);
}

inline double contrastive_losses(std::uint64_t seed, const objectives::FeatureExtractor &phi) {
    Rng rng(seed + 200);
    ad::Tensor y = unit_rows(rng, 8, 5), yp = unit_rows(rng, 8, 5);
    double e = std::max(
        ad::grad_check([&](ad::Tape &t, ad::Var x) { return objectives::infonce(x, t.constant(yp)); }, y, 1e-6),
        ad::grad_check([&](ad::Tape &t, ad::Var x) { return objectives::infonce(t.constant(y), x); }, yp, 1e-6));
    ad::Tensor a = uniform(rng, {8, 8, 3}, 0, 1), b = uniform(rng, {8, 8, 3}, 0, 1);
    return std::max(e, ad::grad_check(
                           [&](ad::Tape &t, ad::Var x) {
                               Rng r(seed);
                               auto fa = phi.features(x), fb = phi.features(t.constant(b));
                               return objectives::infonce_gc(
                                   objectives::sample_feature_pairs(fa, fb, all_ones(8, 8), 4, r));
                           },
                           a, 1e-6));
}

} // namespace gradsuite

/// Runs central-difference checks on every differentiable path, each over
/// `configurations` random seeds.
inline std::vector<GradPathResult> run_gradient_suite(std::size_t configurations = 50) {
    objectives::FeatureExtractor phi(5);
    using Check = std::function<double(std::uint64_t)>;
    const std::vector<std::pair<std::string, Check>> paths{
        {"geometry-encoder", gradsuite::geometry_encoder},
        {"appearance-encoder", gradsuite::appearance_encoder},
        {"skinning-encoder", gradsuite::skinning_encoder},
        {"offsets-and-deformation", gradsuite::offsets_and_deformation},
        {"brdf", [](std::uint64_t s) { return gradsuite::shade_inputs(s, {0, 1}); }},
        {"shade", [](std::uint64_t s) { return gradsuite::shade_inputs(s, {2, 3, 4, 5}); }},
        {"sh-eval", gradsuite::sh_evaluation},
        {"rasterizer", gradsuite::rasterizer},
        {"loss-l1-normal", gradsuite::image_losses},
        {"loss-perceptual", [&](std::uint64_t s) { return gradsuite::perceptual_loss(s, phi); }},
        {"loss-infonce-gc", [&](std::uint64_t s) { return gradsuite::contrastive_losses(s, phi); }},
    };
    std::vector<GradPathResult> out;
    for (const auto &[name, check] : paths) {
        auto start = std::chrono::steady_clock::now();
        GradPathResult r{name, configurations, 0.0, 0.0};
        for (std::uint64_t seed = 0; seed < configurations; ++seed) r.max_error = std::max(r.max_error, check(seed));
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.push_back(r);
    }
    return out;
}

} // namespace rnda::eval
