// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/pbr/shade.hpp>
#include <rnda/render/render.hpp>
#include <rnda/sh/light_probe.hpp>
#include <rnda/skinning/skinning_field.hpp>
#include <rnda/synth/figure.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace rnda::synth {

// ---------------------------------------------------------------------------
// Motion

/// Smooth joint trajectories starting from the rest pose. The root yaws
/// back and forth by up to 160 degrees so one camera sees every side.
inline skinning::PoseTrack generate_motion(std::size_t joints, std::size_t frames, std::uint64_t seed) {
    Rng rng(seed ^ 0x6d6f74696f6eULL);
    const double yaw_amp = 160.0 * std::numbers::pi / 180.0, yaw_period = 80.0;
    struct Harmonic {
        Vec3 axis;
        double amp, omega;
    };
    std::vector<std::array<Harmonic, 2>> h(joints);
    for (std::size_t k = 1; k < joints; ++k)
        for (auto &m : h[k]) {
            Vec3 a{rng.normal(), rng.normal(), rng.normal()};
            m = {normalize3(a), rng.uniform(0.25, 0.45), 2 * std::numbers::pi / rng.uniform(22.0, 60.0)};
        }
    skinning::PoseTrack track{joints, {}};
    for (std::size_t t = 0; t < frames; ++t) {
        std::vector<Vec3> pose(joints, Vec3{0, 0, 0});
        double tt = static_cast<double>(t);
        pose[0] = {0, 0, yaw_amp * std::sin(2 * std::numbers::pi * tt / yaw_period)};
        for (std::size_t k = 1; k < joints; ++k)
            for (const auto &m : h[k]) pose[k] = add3(pose[k], scale3(m.axis, m.amp * std::sin(m.omega * tt)));
        track.frames.push_back(pose);
    }
    return track;
}

// ---------------------------------------------------------------------------
// Pose-dependent deformation

/// Ground-truth non-rigid behaviour: skinning weights modulated by recent
/// joint motion, and a surface ripple driven by the current pose and its
/// velocity. The root joint (global orientation) takes no part.
struct WrinkleField {
    bool active = true;
    double amplitude = 0.0;    ///< bound on |dx| (m)
    double weight_gain = 1.5;  ///< strength of the history modulation
    double history_gain = 2.0;
    std::vector<Vec3> motion_axis; ///< per joint
    std::array<std::vector<double>, 3> pose_dir, velocity_dir; ///< 3J each
    std::array<Vec3, 3> spatial;
    std::array<double, 3> phase{};
};

inline WrinkleField make_wrinkle(const Figure &f, std::uint64_t seed, bool active = true) {
    Rng rng(seed ^ 0x777269ULL);
    WrinkleField w;
    w.active = active;
    w.amplitude = 0.05 * f.mean_bone_length();
    std::size_t J = f.joints();
    w.motion_axis.resize(J);
    for (auto &a : w.motion_axis) a = normalize3({rng.normal(), rng.normal(), rng.normal()});
    for (int m = 0; m < 3; ++m) {
        w.pose_dir[m].assign(3 * J, 0.0);
        w.velocity_dir[m].assign(3 * J, 0.0);
        for (std::size_t i = 3; i < 3 * J; ++i) {
            w.pose_dir[m][i] = rng.normal(0.0, 1.2);
            w.velocity_dir[m][i] = rng.normal(0.0, 8.0);
        }
        w.spatial[m] = scale3(normalize3({rng.normal(), rng.normal(), rng.normal()}), 8.0 / (m + 1));
        w.phase[m] = rng.uniform(0, 2 * std::numbers::pi);
    }
    return w;
}

/// Per-joint history signal in [-1, 1]: motion over the window along the
/// joint's preferred axis.
inline std::vector<double> history_signal(const WrinkleField &w, const skinning::PoseSequence &seq) {
    std::size_t d = seq.window(), J = seq.joints();
    std::vector<double> h(J, 0.0);
    if (!w.active) return h;
    for (std::size_t k = 1; k < J; ++k) {
        double s = 0;
        for (int c = 0; c < 3; ++c)
            s += (seq.theta[((d - 1) * J + k) * 3 + c] - seq.theta[k * 3 + c]) * w.motion_axis[k][c];
        h[k] = std::tanh(w.history_gain * s);
    }
    return h;
}

/// Ground-truth weights for the window: base weights times exp(gain * h_k), renormalized.
inline ad::Tensor dynamic_weights(const Figure &f, const WrinkleField &w, const skinning::PoseSequence &seq) {
    std::size_t n = f.size(), J = f.joints();
    ad::Tensor out = f.weights;
    if (!w.active) return out;
    std::vector<double> h = history_signal(w, seq);
    if (std::all_of(h.begin(), h.end(), [](double v) { return v == 0.0; })) return out;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < J; ++k) s += (out[i * J + k] *= std::exp(w.weight_gain * h[k]));
        for (std::size_t k = 0; k < J; ++k) out[i * J + k] /= s;
    }
    return out;
}

/// Ground-truth offsets along the rest normal; zero in the rest pose,
/// |dx| <= amplitude.
inline ad::Tensor wrinkle_offsets(const Figure &f, const WrinkleField &w, const skinning::PoseSequence &seq) {
    std::size_t n = f.size(), J = f.joints(), d = seq.window();
    ad::Tensor dx({n, 3});
    if (!w.active) return dx;
    std::array<double, 3> arg{};
    for (int m = 0; m < 3; ++m)
        for (std::size_t i = 0; i < 3 * J; ++i) {
            double cur = seq.theta[(d - 1) * J * 3 + i], prev = seq.theta[(d - 2) * J * 3 + i];
            arg[m] += w.pose_dir[m][i] * cur + w.velocity_dir[m][i] * (cur - prev);
        }
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (int m = 0; m < 3; ++m) {
            double psi = dot3(w.spatial[m], f.vertices[i]) + w.phase[m];
            s += 0.5 * (std::sin(arg[m] + psi) - std::sin(psi));
        }
        s *= w.amplitude / 3.0;
        for (int c = 0; c < 3; ++c) dx[3 * i + c] = s * f.normals[i][c];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Lighting and cameras

namespace detail {
inline ad::Tensor to_float_precision(ad::Tensor t) {
    for (double &v : t.values()) v = static_cast<double>(static_cast<float>(v));
    return t;
}
} // namespace detail

/// Sky-gradient probe with one soft sun lobe.
inline sh::LightProbe make_probe(const Vec3 &sun_dir, const Vec3 &sun_rgb, const Vec3 &sky_rgb, double sharpness = 16.0) {
    sh::LightProbe p;
    Vec3 s = normalize3(sun_dir);
    const auto &dirs = sh::probe_directions();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const Vec3 &d = dirs[i].direction;
        double sky = 0.55 + 0.45 * d[2];
        double sun = std::exp(sharpness * (dot3(d, s) - 1.0));
        for (int c = 0; c < 3; ++c)
            p.radiance[3 * i + c] = sky_rgb[c] * sky + sun_rgb[c] * sun;
    }
    // Stored at the precision of the probe file so exports round-trip exactly.
    p.radiance = detail::to_float_precision(std::move(p.radiance));
    return p;
}

inline sh::LightProbe training_probe() { return make_probe({-0.6, -0.8, 0.7}, {2.6, 2.2, 1.7}, {0.55, 0.6, 0.7}); }
inline sh::LightProbe relight_probe() { return make_probe({0.8, -0.5, 0.4}, {1.2, 1.8, 2.6}, {0.7, 0.55, 0.45}); }

/// Ring of cameras around the figure at equal azimuth spacing; camera 0 on -y.
inline std::vector<raster::Camera> ring_cameras(std::size_t count, std::size_t size, double radius = 3.0) {
    std::vector<raster::Camera> cams;
    Vec3 target{0, 0, 0.72};
    double f = 2.0 * static_cast<double>(size);
    for (std::size_t c = 0; c < count; ++c) {
        double az = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(count);
        Vec3 eye{radius * std::cos(az), radius * std::sin(az), target[2] + 0.2};
        cams.push_back(raster::Camera::look_at(eye, target, {0, 0, 1}, f, f, size, size));
    }
    return cams;
}

// ---------------------------------------------------------------------------
// Dataset

enum class Split { train, novel_view, novel_pose, relight };

inline const char *to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::novel_view: return "novel_view";
    case Split::novel_pose: return "novel_pose";
    case Split::relight: return "relight";
    }
    return "?";
}

inline Split parse_split(const std::string &s) {
    for (Split v : {Split::train, Split::novel_view, Split::novel_pose, Split::relight})
        if (s == to_string(v)) return v;
    throw IoError("unknown split: " + s);
}

struct SceneOptions {
    std::size_t joints = 4;
    std::size_t frames = 200;
    std::size_t cameras = 4;
    std::size_t image_size = 64;
    std::size_t window = 10;
    double train_fraction = 0.8;  ///< leading share of frames used for training
    std::size_t view_stride = 8;  ///< novel-view frames: every k-th training frame
    std::size_t pose_stride = 4;  ///< novel-pose frames: every k-th held-out frame
    std::size_t relight_stride = 20;
    std::size_t samples = 500;
    bool wrinkle = true;

    std::size_t train_frames() const { return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(frames))); }

    friend bool operator==(const SceneOptions &, const SceneOptions &) = default;
};

/// One ground-truth image set: linear RGB, [0,1]-encoded normals, alpha.
struct FrameRecord {
    std::size_t time = 0;
    std::size_t camera = 0;
    Split split = Split::train;
    ad::Tensor rgb;    ///< H x W x 3
    ad::Tensor normal; ///< H x W x 3
    ad::Tensor alpha;  ///< H x W

    friend bool operator==(const FrameRecord &, const FrameRecord &) = default;
};

struct SceneDataset {
    std::uint64_t seed = 0;
    SceneOptions options;
    Figure figure;
    WrinkleField wrinkle;
    skinning::PoseTrack poses;
    std::vector<raster::Camera> cameras;
    sh::LightProbe probe;
    sh::LightProbe relight_probe;
    std::vector<FrameRecord> frames;

    std::vector<const FrameRecord *> split(Split s) const {
        std::vector<const FrameRecord *> out;
        for (const auto &f : frames)
            if (f.split == s) out.push_back(&f);
        return out;
    }
};

/// Ground-truth posed Gaussians for frame `t` (constants on `tape`).
inline render::PosedGaussians pose_ground_truth(ad::Tape &tape, const Figure &f, const WrinkleField &w,
                                                const skinning::PoseTrack &poses, std::size_t t, std::size_t window) {
    skinning::PoseSequence seq = skinning::window_at(poses, t, window);
    std::size_t n = f.size();
    ad::Tensor pos({n, 3}), nrm({n, 3});
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            pos[3 * i + c] = f.vertices[i][c];
            nrm[3 * i + c] = f.normals[i][c];
        }
    skinning::JointTransforms joints = skinning::forward_kinematics(f.skeleton, poses.frames[t]);
    skinning::Offsets off{tape.constant(wrinkle_offsets(f, w, seq)), tape.constant(ad::Tensor({n, 4}))};
    skinning::Posed p = skinning::deform(tape.constant(pos), tape.constant(f.quaternion), tape.constant(f.scale),
                                         tape.constant(nrm), tape.constant(dynamic_weights(f, w, seq)),
                                         tape.constant(joints), &off);
    render::PosedGaussians g{p.position, p.covariance, tape.constant(f.opacity), p.normal};
    g.albedo = tape.constant(f.albedo);
    g.roughness = tape.constant(f.roughness);
    ad::Tensor vis({n, sh::kNumCoeffs});
    auto full = pbr::full_visibility();
    for (std::size_t i = 0; i < n; ++i) std::copy(full.begin(), full.end(), vis.data() + i * sh::kNumCoeffs);
    g.visibility = tape.constant(vis);
    return g;
}

/// Renders the ground truth of one record; values are rounded to float so
/// they survive PFM storage unchanged.
inline FrameRecord render_record(const SceneDataset &ds, std::size_t t, std::size_t cam, Split split) {
    ad::Tape tape;
    render::PosedGaussians g = pose_ground_truth(tape, ds.figure, ds.wrinkle, ds.poses, t, ds.options.window);
    const sh::LightProbe &probe = split == Split::relight ? ds.relight_probe : ds.probe;
    ad::Var L = tape.constant(probe.radiance);
    const raster::Camera &c = ds.cameras.at(cam);
    raster::RenderedImage rgb =
        raster::ad_ops::to_image(render::render_channels(g, render::ShadingMode::pbr, c, &L).value(), raster::Channel::rgb);
    raster::RenderedImage nrm = raster::ad_ops::to_image(render::render_channels(g, render::ShadingMode::normal, c).value(),
                                                         raster::Channel::normal);
    return {t, cam, split, detail::to_float_precision(rgb.color), detail::to_float_precision(nrm.color),
            detail::to_float_precision(rgb.alpha)};
}

/// The (time, camera, split) list of a scene, in storage order.
inline std::vector<std::tuple<std::size_t, std::size_t, Split>> record_plan(const SceneOptions &o) {
    std::vector<std::tuple<std::size_t, std::size_t, Split>> plan;
    std::size_t nt = o.train_frames();
    for (std::size_t t = 0; t < nt; ++t) plan.emplace_back(t, 0, Split::train);
    for (std::size_t c = 1; c < o.cameras; ++c)
        for (std::size_t t = 0; t < nt; t += o.view_stride) plan.emplace_back(t, c, Split::novel_view);
    for (std::size_t t = nt; t < o.frames; t += o.pose_stride) plan.emplace_back(t, 0, Split::novel_pose);
    for (std::size_t c = 0; c < o.cameras; ++c)
        for (std::size_t t = 0; t < o.frames; t += o.relight_stride) plan.emplace_back(t, c, Split::relight);
    return plan;
}

/// Everything except the rendered images; a pure function of seed and options.
inline SceneDataset scene_setup(std::uint64_t seed, const SceneOptions &o) {
    if (o.cameras < 2) throw Error("scene needs at least 2 cameras");
    if (o.frames < 2) throw Error("scene needs at least 2 frames");
    if (o.window < 2) throw Error("pose window must be at least 2");
    if (!(o.train_fraction > 0 && o.train_fraction <= 1)) throw Error("train_fraction must be in (0, 1]");
    if (o.view_stride == 0 || o.pose_stride == 0 || o.relight_stride == 0) throw Error("strides must be positive");
    SceneDataset ds;
    ds.seed = seed;
    ds.options = o;
    ds.figure = generate_figure(seed, o.joints, o.samples);
    ds.wrinkle = make_wrinkle(ds.figure, seed, o.wrinkle);
    ds.poses = generate_motion(o.joints, o.frames, seed);
    ds.cameras = ring_cameras(o.cameras, o.image_size);
    ds.probe = training_probe();
    ds.relight_probe = relight_probe();
    return ds;
}

/// Generates a full scene: figure, motion, cameras, probes and GT images.
inline SceneDataset generate_sequence(std::uint64_t seed, const SceneOptions &o = {}) {
    SceneDataset ds = scene_setup(seed, o);
    for (auto [t, c, s] : record_plan(o)) ds.frames.push_back(render_record(ds, t, c, s));
    return ds;
}

} // namespace rnda::synth
