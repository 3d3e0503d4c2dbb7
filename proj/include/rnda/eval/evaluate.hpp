// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/eval/metrics.hpp>
#include <rnda/objectives/losses.hpp>
#include <rnda/synth/scene.hpp>
#include <rnda/train/model.hpp>

#include <cstdio>
#include <string>

namespace rnda::eval {

inline std::string frame_label(std::size_t time, std::size_t camera) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%04zuc%zu", time, camera);
    return buf;
}

/// Image-pair metrics for one frame: color PSNR/SSIM over the whole image,
/// normal PSNR/SSIM over the union of both foregrounds, and the
/// perceptual proxy.
inline void score_frame(MetricReport &r, const std::string &label, const ad::Tensor &gt_rgb, const ad::Tensor &rgb,
                        const ad::Tensor &gt_normal, const ad::Tensor &normal, const ad::Tensor &gt_alpha,
                        const ad::Tensor &alpha, const objectives::FeatureExtractor &phi) {
    r.add_psnr("psnr", label, psnr(gt_rgb, rgb));
    r.add("ssim", label, ssim(gt_rgb, rgb));
    ad::Tensor m = union_mask(gt_alpha, alpha);
    r.add_psnr("psnr_n", label, psnr_masked(gt_normal, normal, m));
    r.add("ssim_n", label, ssim_masked(gt_normal, normal, m));
    ad::Tape tape;
    r.add("perceptual-proxy", label, objectives::perceptual(phi, tape.constant(gt_rgb), tape.constant(rgb)).value().item());
}

/// Renders every record of `split` with the model and scores it against
/// the stored ground truth. Relighting frames use the dataset's held-out
/// probe; the others use the model's own probe (or SH color before stage
/// two).
inline MetricReport evaluate(const train::AvatarModel &m, const synth::SceneDataset &ds, synth::Split split) {
    MetricReport report(synth::to_string(split));
    auto records = ds.split(split);
    if (records.empty()) throw Error(std::string("dataset has no ") + synth::to_string(split) + " frames");
    bool pbr = !m.avatar.has_color();
    if (split == synth::Split::relight && !pbr) throw Error("relighting needs a model trained through stage two");
    sh::LightProbe learned = train::current_probe(m);
    const sh::LightProbe &probe = split == synth::Split::relight ? ds.relight_probe : learned;
    objectives::FeatureExtractor phi;
    for (const synth::FrameRecord *f : records) {
        skinning::PoseSequence seq = skinning::window_at(ds.poses, f->time, m.config.skinning.window);
        const raster::Camera &cam = ds.cameras.at(f->camera);
        raster::RenderedImage rgb = train::render_image(
            m, seq, cam, pbr ? render::ShadingMode::pbr : render::ShadingMode::sh_color, &probe);
        raster::RenderedImage nrm = train::render_image(m, seq, cam, render::ShadingMode::normal);
        score_frame(report, frame_label(f->time, f->camera), f->rgb, rgb.color, f->normal, nrm.color, f->alpha,
                    rgb.alpha, phi);
    }
    return report;
}

} // namespace rnda::eval
