// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/objectives/losses.hpp>
#include <rnda/synth/scene.hpp>
#include <rnda/train/adam.hpp>
#include <rnda/train/model.hpp>

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace rnda::train {

/// Everything that controls a training run.
struct TrainConfig {
    AdamConfig adam{};
    std::size_t batch = 1;
    std::size_t stage1_iters = 3000;
    std::size_t stage2_iters = 3000;
    objectives::LossWeights weights{};
    std::size_t gc_pairs = 64;         ///< feature pairs per layer for the consistency loss
    objectives::ViewJitter jitter{};   ///< virtual-camera perturbation
    std::uint64_t seed = 0;
    ModelConfig model{};
    synth::SceneOptions scene{};       ///< used when `train` synthesizes its own data

    void validate() const {
        adam.validate();
        weights.validate();
        if (batch != 1) throw Error("only batch size 1 is supported");
        if (stage1_iters == 0 || stage2_iters == 0) throw Error("iteration counts must be positive");
        if (gc_pairs < 2) throw Error("gc_pairs must be at least 2");
        if (model.skinning.window < 2) throw Error("pose window must be at least 2");
    }
};

namespace detail {
template <class T> void read(const YAML::Node &n, const char *key, T &out) {
    if (n && n[key]) out = n[key].as<T>();
}
} // namespace detail

/// Reads a YAML config. Missing keys keep their defaults; unknown keys are
/// rejected so typos do not pass silently.
inline TrainConfig parse_config(const YAML::Node &root) {
    static const std::map<std::string, std::vector<std::string>> known{
        {"", {"seed", "lr", "batch", "stage1_iters", "stage2_iters", "window", "gc_pairs", "loss", "virtual_camera",
              "model", "scene"}},
        {"loss", {"lpips", "normal", "gc"}},
        {"virtual_camera", {"azimuth_deg", "elevation_deg"}},
        {"model", {"width", "geometry_layers", "appearance_layers", "visibility_width", "skinning_width",
                   "head_width", "offset_width", "offset_cap", "dynamic", "probe_init"}},
        {"scene", {"joints", "frames", "cameras", "image_size", "samples", "wrinkle"}},
    };
    auto check = [&](const YAML::Node &n, const std::string &section) {
        if (!n) return;
        if (!n.IsMap()) throw Error("config section '" + (section.empty() ? "root" : section) + "' must be a mapping");
        const auto &keys = known.at(section);
        for (const auto &kv : n) {
            auto k = kv.first.as<std::string>();
            if (std::find(keys.begin(), keys.end(), k) == keys.end())
                throw Error("unknown config key '" + (section.empty() ? k : section + "." + k) + "'");
        }
    };
    TrainConfig c;
    try {
        check(root, "");
        for (const char *s : {"loss", "virtual_camera", "model", "scene"}) check(root[s], s);
        detail::read(root, "seed", c.seed);
        detail::read(root, "lr", c.adam.lr);
        detail::read(root, "batch", c.batch);
        detail::read(root, "stage1_iters", c.stage1_iters);
        detail::read(root, "stage2_iters", c.stage2_iters);
        detail::read(root, "window", c.model.skinning.window);
        detail::read(root, "gc_pairs", c.gc_pairs);
        const YAML::Node l = root["loss"];
        detail::read(l, "lpips", c.weights.lpips);
        detail::read(l, "normal", c.weights.normal);
        detail::read(l, "gc", c.weights.gc);
        const YAML::Node v = root["virtual_camera"];
        detail::read(v, "azimuth_deg", c.jitter.azimuth_deg);
        detail::read(v, "elevation_deg", c.jitter.elevation_deg);
        const YAML::Node m = root["model"];
        detail::read(m, "width", c.model.avatar.width);
        detail::read(m, "geometry_layers", c.model.avatar.geometry_layers);
        detail::read(m, "appearance_layers", c.model.avatar.appearance_layers);
        detail::read(m, "visibility_width", c.model.avatar.visibility_width);
        detail::read(m, "skinning_width", c.model.skinning.width);
        detail::read(m, "head_width", c.model.skinning.head_width);
        detail::read(m, "offset_width", c.model.skinning.offset_width);
        detail::read(m, "offset_cap", c.model.skinning.offset_cap);
        detail::read(m, "dynamic", c.model.skinning.dynamic);
        detail::read(m, "probe_init", c.model.probe_init);
        const YAML::Node s = root["scene"];
        detail::read(s, "joints", c.scene.joints);
        detail::read(s, "frames", c.scene.frames);
        detail::read(s, "cameras", c.scene.cameras);
        detail::read(s, "image_size", c.scene.image_size);
        detail::read(s, "samples", c.scene.samples);
        detail::read(s, "wrinkle", c.scene.wrinkle);
    } catch (const YAML::Exception &e) {
        throw Error(std::string("bad config value: ") + e.what());
    }
    c.scene.window = c.model.skinning.window;
    c.validate();
    return c;
}

inline TrainConfig load_config(const std::filesystem::path &path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path.string());
    } catch (const YAML::BadFile &) {
        throw IoError("cannot open config " + path.string());
    } catch (const YAML::Exception &e) {
        throw IoError("corrupt config " + path.string() + ": " + e.what());
    }
    return parse_config(root.IsNull() ? YAML::Node(YAML::NodeType::Map) : root);
}

/// Serializes every setting, so a saved file reproduces the run.
inline std::string to_yaml(const TrainConfig &c) {
    YAML::Emitter y;
    y << YAML::BeginMap;
    y << YAML::Key << "seed" << YAML::Value << c.seed;
    y << YAML::Key << "lr" << YAML::Value << YAML::Precision(17) << c.adam.lr;
    y << YAML::Key << "batch" << YAML::Value << c.batch;
    y << YAML::Key << "stage1_iters" << YAML::Value << c.stage1_iters;
    y << YAML::Key << "stage2_iters" << YAML::Value << c.stage2_iters;
    y << YAML::Key << "window" << YAML::Value << c.model.skinning.window;
    y << YAML::Key << "gc_pairs" << YAML::Value << c.gc_pairs;
    y << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "lpips" << YAML::Value << c.weights.lpips;
    y << YAML::Key << "normal" << YAML::Value << c.weights.normal;
    y << YAML::Key << "gc" << YAML::Value << c.weights.gc << YAML::EndMap;
    y << YAML::Key << "virtual_camera" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "azimuth_deg" << YAML::Value << c.jitter.azimuth_deg;
    y << YAML::Key << "elevation_deg" << YAML::Value << c.jitter.elevation_deg << YAML::EndMap;
    y << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "width" << YAML::Value << c.model.avatar.width;
    y << YAML::Key << "geometry_layers" << YAML::Value << c.model.avatar.geometry_layers;
    y << YAML::Key << "appearance_layers" << YAML::Value << c.model.avatar.appearance_layers;
    y << YAML::Key << "visibility_width" << YAML::Value << c.model.avatar.visibility_width;
    y << YAML::Key << "skinning_width" << YAML::Value << c.model.skinning.width;
    y << YAML::Key << "head_width" << YAML::Value << c.model.skinning.head_width;
    y << YAML::Key << "offset_width" << YAML::Value << c.model.skinning.offset_width;
    y << YAML::Key << "offset_cap" << YAML::Value << c.model.skinning.offset_cap;
    y << YAML::Key << "dynamic" << YAML::Value << c.model.skinning.dynamic;
    y << YAML::Key << "probe_init" << YAML::Value << c.model.probe_init << YAML::EndMap;
    y << YAML::Key << "scene" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "joints" << YAML::Value << c.scene.joints;
    y << YAML::Key << "frames" << YAML::Value << c.scene.frames;
    y << YAML::Key << "cameras" << YAML::Value << c.scene.cameras;
    y << YAML::Key << "image_size" << YAML::Value << c.scene.image_size;
    y << YAML::Key << "samples" << YAML::Value << c.scene.samples;
    y << YAML::Key << "wrinkle" << YAML::Value << c.scene.wrinkle << YAML::EndMap;
    y << YAML::EndMap;
    return std::string(y.c_str()) + "\n";
}

} // namespace rnda::train
