// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/checkpoint.hpp>
#include <rnda/avatar/gaussian_avatar.hpp>
#include <rnda/render/render.hpp>
#include <rnda/sh/light_probe.hpp>
#include <rnda/skinning/pose.hpp>
#include <rnda/skinning/skinning_field.hpp>
#include <rnda/synth/figure.hpp>
#include <rnda/train/adam.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rnda::train {

inline constexpr const char *kProbeParam = "light.probe";

/// Rest-pose body the avatar is built on: surface points, their normals,
/// the skeleton and a prior on skinning weights.
struct BodyTemplate {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    skinning::Skeleton skeleton;
    ad::Tensor prior_weights; ///< N x J on the simplex, or empty for no prior

    std::size_t size() const { return vertices.size(); }
};

/// Template from a synthetic figure: its surface samples and skeleton, with
/// the distance-based prior in place of the ground-truth weights.
inline BodyTemplate template_of(const synth::Figure &fig) {
    return {fig.vertices, fig.normals, fig.skeleton, synth::template_weights(fig.bones, fig.vertices)};
}

struct ModelConfig {
    avatar::AvatarConfig avatar{};
    skinning::SkinningConfig skinning{};
    double probe_init = 0.6; ///< initial radiance of every probe texel

    ModelConfig() {
        avatar.width = 64;
        avatar.geometry_layers = 3;
        avatar.appearance_layers = 3;
        skinning.offset_cap = 0.02;
    }
};

/// The full learnable avatar: attribute networks, skinning field, offsets
/// and environment probe, all in one parameter store.
struct AvatarModel {
    ModelConfig config;
    BodyTemplate body;
    avatar::GaussianAvatar avatar;
    skinning::SkinningField skinning;
    int completed_stage = 0; ///< 0 untrained, 1 after stage one, 2 after stage two

    ParamStore &params() { return avatar.params; }
    const ParamStore &params() const { return avatar.params; }
    std::size_t size() const { return avatar.size(); }
    std::size_t joints() const { return body.skeleton.joints(); }
};

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline AvatarModel make_model(const BodyTemplate &body, const ModelConfig &cfg = {}, std::uint64_t seed = 0) {
    if (body.size() == 0) throw Error("body template has no vertices");
    if (body.skeleton.joints() < 1) throw Error("body template has no joints");
    if (!(cfg.probe_init > 0)) throw Error("initial probe radiance must be positive");
    AvatarModel m;
    m.config = cfg;
    m.config.skinning.joints = body.skeleton.joints();
    m.body = body;
    m.avatar = avatar::init_from_template(body.vertices, body.normals, cfg.avatar, seed);
    m.skinning = skinning::make_skinning_field(m.avatar.params, m.config.skinning, seed + 1);
    if (!body.prior_weights.empty()) {
        if (body.prior_weights.shape() != ad::Shape{body.size(), m.joints()})
            throw Error("prior weights must be N x J");
        m.skinning.prior_logits = ad::Tensor(body.prior_weights.shape());
        for (std::size_t i = 0; i < body.prior_weights.size(); ++i)
            m.skinning.prior_logits[i] = std::log(std::max(body.prior_weights[i], 1e-6));
    }
    ad::Tensor probe({sh::kProbeRows, sh::kProbeCols, 3});
    probe.fill(inverse_softplus(cfg.probe_init));
    m.avatar.params.add(kProbeParam, std::move(probe));
    return m;
}

/// Non-negative probe radiance as a tape node.
inline ad::Var probe_radiance(const Binding &b) { return ad::softplus(b(kProbeParam)); }

inline sh::LightProbe current_probe(const AvatarModel &m) {
    sh::LightProbe p;
    const ad::Tensor &raw = m.params().at(kProbeParam);
    for (std::size_t i = 0; i < raw.size(); ++i)
        p.radiance[i] = raw[i] > 30.0 ? raw[i] : std::log1p(std::exp(raw[i]));
    return p;
}

inline std::vector<Vec3> pose_vector(const ad::Tensor &current) {
    std::vector<Vec3> out(current.dim(0));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = {current[3 * j], current[3 * j + 1], current[3 * j + 2]};
    return out;
}

/// Decodes, skins and shades-ready Gaussians for one pose window.
inline render::PosedGaussians pose(const AvatarModel &m, const Binding &b, const skinning::PoseSequence &seq) {
    skinning::validate(seq);
    if (seq.joints() != m.joints())
        throw Error("pose has " + std::to_string(seq.joints()) + " joints, model " + std::to_string(m.joints()));
    if (seq.window() != m.config.skinning.window)
        throw Error("pose window " + std::to_string(seq.window()) + " differs from the model's " +
                    std::to_string(m.config.skinning.window));
    ad::Tape &t = b.tape();
    ad::Var enc = t.constant(m.avatar.encoding);
    avatar::Geometry geo = avatar::encode_geometry(m.avatar, b);
    ad::Tensor current = seq.current();
    ad::Var weights = skinning::skinning_weights(m.skinning, b, enc, t.constant(seq.theta));
    skinning::Offsets off = skinning::nonrigid_offsets(m.skinning, b, enc, t.constant(current));
    ad::Var joints = t.constant(skinning::forward_kinematics(m.body.skeleton, pose_vector(current)));
    skinning::Posed p = skinning::deform(t.constant(m.avatar.positions), geo.rotation, geo.scale, geo.normal, weights,
                                         joints, &off);
    avatar::Appearance app = avatar::encode_appearance(m.avatar, b, p.normal);
    render::PosedGaussians g{p.position, p.covariance, geo.opacity, p.normal};
    g.color = app.color;
    g.albedo = app.albedo;
    g.roughness = app.roughness;
    g.visibility = app.visibility;
    return g;
}

/// Renders one mode without recording gradients.
inline raster::RenderedImage render_image(const AvatarModel &m, const skinning::PoseSequence &seq,
                                          const raster::Camera &cam, render::ShadingMode mode,
                                          const sh::LightProbe *probe = nullptr) {
    ad::Tape tape;
    Binding b(tape, m.params(), [](const std::string &) { return false; });
    render::PosedGaussians g = pose(m, b, seq);
    ad::Var L = probe ? tape.constant(probe->radiance) : probe_radiance(b);
    ad::Var out = render::render_channels(g, mode, cam, &L);
    return raster::ad_ops::to_image(out.value(), render::semantics_of(mode));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {
inline ad::Tensor vector_tensor(const std::vector<double> &v) { return ad::Tensor({v.size()}, v); }

inline std::vector<double> model_numbers(const ModelConfig &c, int stage) {
    const auto &a = c.avatar;
    const auto &s = c.skinning;
    return {double(a.width),          double(a.geometry_layers), double(a.appearance_layers), double(a.visibility_width),
            a.scale_cap_fraction,     a.init_opacity,            a.init_scale,                a.init_visibility,
            a.output_gain,            double(a.zero_init),       double(s.joints),            double(s.window),
            double(s.width),          double(s.head_width),      double(s.offset_width),      double(s.dynamic),
            s.offset_cap,             s.output_gain,             c.probe_init,                double(stage)};
}

inline std::pair<ModelConfig, int> model_config_of(const ad::Tensor &t) {
    if (t.size() != 20) throw IoError("checkpoint model description has the wrong length");
    ModelConfig c;
    auto z = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
    c.avatar.width = z(0);
    c.avatar.geometry_layers = z(1);
    c.avatar.appearance_layers = z(2);
    c.avatar.visibility_width = z(3);
    c.avatar.scale_cap_fraction = t[4];
    c.avatar.init_opacity = t[5];
    c.avatar.init_scale = t[6];
    c.avatar.init_visibility = t[7];
    c.avatar.output_gain = t[8];
    c.avatar.zero_init = t[9] != 0;
    c.skinning.joints = z(10);
    c.skinning.window = z(11);
    c.skinning.width = z(12);
    c.skinning.head_width = z(13);
    c.skinning.offset_width = z(14);
    c.skinning.dynamic = t[15] != 0;
    c.skinning.offset_cap = t[16];
    c.skinning.output_gain = t[17];
    c.probe_init = t[18];
    return {c, static_cast<int>(t[19])};
}

inline ad::Tensor vec3_rows(const std::vector<Vec3> &v) {
    ad::Tensor t({v.size(), 3});
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int c = 0; c < 3; ++c) t[3 * i + c] = v[i][c];
    return t;
}

inline std::vector<Vec3> rows_vec3(const ad::Tensor &t) {
    if (t.rank() != 2 || t.dim(1) != 3) throw IoError("checkpoint: expected an N x 3 record");
    std::vector<Vec3> v(t.dim(0));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = {t[3 * i], t[3 * i + 1], t[3 * i + 2]};
    return v;
}
} // namespace detail

/// Writes every parameter, the template, the model layout, and (when
/// given) the optimizer moments and step counter.
inline void save_model(const std::filesystem::path &path, const AvatarModel &m, const Adam *opt = nullptr) {
    io::TensorRecords rec;
    for (const auto &[name, t] : m.params().all()) rec.emplace("param/" + name, t);
    rec.emplace("meta/model", detail::vector_tensor(detail::model_numbers(m.config, m.completed_stage)));
    rec.emplace("template/vertices", detail::vec3_rows(m.body.vertices));
    rec.emplace("template/normals", detail::vec3_rows(m.body.normals));
    rec.emplace("template/rest", detail::vec3_rows(m.body.skeleton.rest));
    std::vector<double> parents(m.body.skeleton.parents.begin(), m.body.skeleton.parents.end());
    rec.emplace("template/parents", detail::vector_tensor(parents));
    if (!m.body.prior_weights.empty()) rec.emplace("template/prior", m.body.prior_weights);
    if (opt) {
        rec.emplace("adam/steps", detail::vector_tensor({static_cast<double>(opt->steps())}));
        for (const auto &[name, t] : opt->first_moments()) rec.emplace("adam/m/" + name, t);
        for (const auto &[name, t] : opt->second_moments()) rec.emplace("adam/v/" + name, t);
    }
    io::write_checkpoint(path, rec);
}

struct LoadedModel {
    AvatarModel model;
    std::optional<std::uint64_t> adam_steps;
    std::map<std::string, ad::Tensor> adam_m, adam_v;
};

inline LoadedModel load_model(const std::filesystem::path &path) {
    io::TensorRecords rec = io::read_checkpoint(path);
    auto need = [&](const std::string &k) -> const ad::Tensor & {
        auto it = rec.find(k);
        if (it == rec.end()) throw IoError("checkpoint " + path.string() + " lacks record " + k);
        return it->second;
    };
    auto [cfg, stage] = detail::model_config_of(need("meta/model"));
    BodyTemplate body;
    body.vertices = detail::rows_vec3(need("template/vertices"));
    body.normals = detail::rows_vec3(need("template/normals"));
    body.skeleton.rest = detail::rows_vec3(need("template/rest"));
    for (double p : need("template/parents").storage()) body.skeleton.parents.push_back(static_cast<int>(p));
    if (auto it = rec.find("template/prior"); it != rec.end()) body.prior_weights = it->second;

    LoadedModel out;
    out.model = make_model(body, cfg);
    out.model.completed_stage = stage;
    ParamStore loaded;
    for (const auto &[k, t] : rec) {
        if (k.starts_with("param/")) loaded.add(k.substr(6), t);
        else if (k.starts_with("adam/m/")) out.adam_m.emplace(k.substr(7), t);
        else if (k.starts_with("adam/v/")) out.adam_v.emplace(k.substr(7), t);
    }
    // The stored set wins: it reflects removals such as the color network.
    for (const auto &[k, t] : out.model.params().all())
        if (!loaded.contains(k) && !k.starts_with("color."))
            throw IoError("checkpoint " + path.string() + " lacks parameter " + k);
    for (const auto &[k, t] : loaded.all())
        if (out.model.params().contains(k) && out.model.params().at(k).shape() != t.shape())
            throw IoError("checkpoint parameter " + k + " has shape " + ad::to_string(t.shape()));
    out.model.avatar.params = std::move(loaded);
    if (auto it = rec.find("adam/steps"); it != rec.end()) out.adam_steps = static_cast<std::uint64_t>(it->second[0]);
    return out;
}

} // namespace rnda::train
