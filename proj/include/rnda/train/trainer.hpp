// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/objectives/losses.hpp>
#include <rnda/synth/scene.hpp>
#include <rnda/train/adam.hpp>
#include <rnda/train/config.hpp>
#include <rnda/train/model.hpp>

#include <array>
#include <chrono>
#include <functional>
#include <vector>

namespace rnda::train {

/// Parameters each stage optimizes; everything else is held fixed.
inline bool stage1_trainable(const std::string &name) {
    return has_any_prefix(name, {"skinning.", "offsets.", "geometry.", "color."});
}
inline bool stage2_trainable(const std::string &name) {
    return has_any_prefix(name, {"geometry.", "material.", "visibility.", "light."});
}

struct TrainLog {
    std::vector<double> loss; ///< per iteration, before the update
    std::size_t skipped = 0;  ///< updates dropped for non-finite gradients
    double seconds = 0.0;
};

/// Called after every iteration with (stage, iteration, loss).
using Progress = std::function<void(int, std::size_t, double)>;

namespace detail {

struct TrainFrame {
    const synth::FrameRecord *record;
    ad::Tensor mask;
};

inline std::vector<TrainFrame> training_frames(const synth::SceneDataset &ds) {
    std::vector<TrainFrame> out;
    for (const synth::FrameRecord *f : ds.split(synth::Split::train))
        out.push_back({f, objectives::foreground_mask(f->alpha)});
    if (out.empty()) throw Error("dataset has no training frames");
    return out;
}

inline void check_compatible(const synth::SceneDataset &ds, const AvatarModel &m) {
    if (ds.poses.joints != m.joints())
        throw Error("dataset has " + std::to_string(ds.poses.joints) + " joints, model " + std::to_string(m.joints()));
}

inline ad::Var stage1_objective(const AvatarModel &m, const Binding &b, const synth::SceneDataset &ds,
                                const synth::FrameRecord &f, const ad::Tensor &mask,
                                const objectives::FeatureExtractor &phi, const objectives::LossWeights &w) {
    ad::Tape &t = b.tape();
    render::PosedGaussians g = pose(m, b, skinning::window_at(ds.poses, f.time, m.config.skinning.window));
    static constexpr std::array modes{render::ShadingMode::sh_color, render::ShadingMode::normal};
    std::vector<ad::Var> img = render::render_modes(g, modes, ds.cameras.at(f.camera));
    return objectives::stage1_loss(phi, t.constant(f.rgb), img[0], t.constant(f.normal), img[1], mask, w);
}

} // namespace detail

/// Stage one: skinning field, offsets, geometry and the SH color network
/// fit the images and normals of the training frames.
inline TrainLog train_stage1(const synth::SceneDataset &ds, AvatarModel &m, const TrainConfig &cfg,
                             const Progress &progress = {}) {
    cfg.validate();
    detail::check_compatible(ds, m);
    auto frames = detail::training_frames(ds);
    if (!m.avatar.has_color()) throw Error("stage one needs the SH color network");
    auto start = std::chrono::steady_clock::now();
    objectives::FeatureExtractor phi;
    Adam opt(cfg.adam);
    Rng rng(cfg.seed ^ 0x5ea9e1ULL);
    TrainLog log;
    for (std::size_t it = 0; it < cfg.stage1_iters; ++it) {
        const detail::TrainFrame &f = frames[rng.index(frames.size())];
        ad::Tape tape;
        Binding b(tape, m.params(), stage1_trainable);
        ad::Var loss = detail::stage1_objective(m, b, ds, *f.record, f.mask, phi, cfg.weights);
        tape.backward(loss);
        if (!opt.step(m.params(), b.gradients())) ++log.skipped;
        log.loss.push_back(loss.value().item());
        if (progress) progress(1, it, log.loss.back());
    }
    m.completed_stage = 1;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
}

/// Stage two: drops the SH color network and fits albedo, roughness,
/// visibility and the probe jointly with geometry through the PBR renderer,
/// plus the consistency loss against a random virtual view.
inline TrainLog train_stage2(const synth::SceneDataset &ds, AvatarModel &m, const TrainConfig &cfg,
                             const Progress &progress = {}) {
    cfg.validate();
    if (m.completed_stage < 1) throw Error("stage two needs a model trained by stage one");
    detail::check_compatible(ds, m);
    auto frames = detail::training_frames(ds);
    auto start = std::chrono::steady_clock::now();
    m.avatar.remove_color();
    objectives::FeatureExtractor phi;
    Adam opt(cfg.adam);
    Rng rng(cfg.seed ^ 0x5ea9e2ULL);
    TrainLog log;
    static constexpr std::array modes{render::ShadingMode::pbr, render::ShadingMode::normal};
    for (std::size_t it = 0; it < cfg.stage2_iters; ++it) {
        const detail::TrainFrame &f = frames[rng.index(frames.size())];
        const raster::Camera &cam = ds.cameras.at(f.record->camera);
        ad::Tape tape;
        Binding b(tape, m.params(), stage2_trainable);
        render::PosedGaussians g = pose(m, b, skinning::window_at(ds.poses, f.record->time, m.config.skinning.window));
        ad::Var L = probe_radiance(b);
        std::vector<ad::Var> img = render::render_modes(g, modes, cam, &L);
        ad::Var gc;
        if (cfg.weights.gc > 0) {
            raster::Camera virt = objectives::virtual_camera(cam, rng, cfg.jitter);
            objectives::CoVisibility cv = objectives::covisibility_mask(
                g.position.value(), g.covariance.value(), g.opacity.value(), g.normal.value(), cam, virt);
            auto corr = objectives::gaussian_correspondences(g.position.value(), cv, cam, virt);
            if (!corr.empty()) {
                ad::Var other = render::rgb(render::render_channels(g, render::ShadingMode::pbr, virt, &L));
                auto pairs = objectives::sample_feature_pairs(phi.features(img[0]), phi.features(other), corr,
                                                              cam.width, cam.height, virt.width, virt.height,
                                                              cfg.gc_pairs, rng);
                gc = objectives::infonce_gc(pairs);
            }
        }
        ad::Var loss = objectives::stage2_loss(phi, tape.constant(f.record->rgb), img[0], tape.constant(f.record->normal),
                                               img[1], gc, f.mask, cfg.weights);
        tape.backward(loss);
        if (!opt.step(m.params(), b.gradients())) ++log.skipped;
        log.loss.push_back(loss.value().item());
        if (progress) progress(2, it, log.loss.back());
    }
    m.completed_stage = 2;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
}

/// Mean stage-one loss over all training frames (no updates).
inline double mean_stage1_loss(const synth::SceneDataset &ds, const AvatarModel &m, const objectives::LossWeights &w) {
    detail::check_compatible(ds, m);
    auto frames = detail::training_frames(ds);
    objectives::FeatureExtractor phi;
    double total = 0;
    for (const auto &f : frames) {
        ad::Tape tape;
        Binding b(tape, m.params(), [](const std::string &) { return false; });
        total += detail::stage1_objective(m, b, ds, *f.record, f.mask, phi, w).value().item();
    }
    return total / static_cast<double>(frames.size());
}

} // namespace rnda::train
