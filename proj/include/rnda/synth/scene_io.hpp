// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/io/pfm.hpp>
#include <rnda/synth/scene.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rnda::synth {

inline constexpr const char *kSceneFormat = "rnda-scene-1";

namespace detail {
inline io::FloatImage to_pfm(const ad::Tensor &t, std::size_t w, std::size_t h, std::size_t c) {
    io::FloatImage img{w, h, c, std::vector<float>(t.size())};
    for (std::size_t i = 0; i < t.size(); ++i) img.data[i] = static_cast<float>(t[i]);
    return img;
}

inline ad::Tensor from_pfm(const std::filesystem::path &path, std::size_t w, std::size_t h, std::size_t c) {
    io::FloatImage img = io::read_pfm(path);
    if (img.width != w || img.height != h || img.channels != c)
        throw IoError("unexpected image size in " + path.string() + ": " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + "x" + std::to_string(img.channels));
    ad::Tensor t(c == 1 ? ad::Shape{h, w} : ad::Shape{h, w, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.data[i];
    return t;
}

inline std::string frame_stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}
} // namespace detail

/// Writes one camera per line: width height fx fy cx cy, rotation (9),
/// translation (3), target (3).
inline void write_cameras(const std::filesystem::path &path, const std::vector<raster::Camera> &cams) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "# width height fx fy cx cy R(9, row-major world-to-camera) t(3) target(3)\n" << std::setprecision(17);
    for (const auto &c : cams) {
        out << c.width << ' ' << c.height << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy;
        for (double v : c.rotation) out << ' ' << v;
        for (double v : c.translation) out << ' ' << v;
        for (double v : c.target) out << ' ' << v;
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<raster::Camera> read_cameras(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open camera file: " + path.string());
    std::vector<raster::Camera> cams;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        raster::Camera c;
        row >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy;
        for (double &v : c.rotation) row >> v;
        for (double &v : c.translation) row >> v;
        for (double &v : c.target) row >> v;
        if (!row) throw IoError("malformed camera line in " + path.string());
        cams.push_back(c);
    }
    return cams;
}

/// Writes the dataset under `dir`: manifest.yaml, poses.txt, cameras.txt,
/// probe.pfm, relight_probe.pfm and frames/NNNN_{rgb,normal,alpha}.pfm.
inline void export_scene(const SceneDataset &ds, const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    const SceneOptions &o = ds.options;
    YAML::Emitter y;
    y << YAML::BeginMap;
    y << YAML::Key << "format" << YAML::Value << kSceneFormat;
    y << YAML::Key << "seed" << YAML::Value << ds.seed;
    y << YAML::Key << "options" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "joints" << YAML::Value << o.joints << YAML::Key << "frames" << YAML::Value << o.frames;
    y << YAML::Key << "cameras" << YAML::Value << o.cameras << YAML::Key << "image_size" << YAML::Value << o.image_size;
    y << YAML::Key << "window" << YAML::Value << o.window;
    y << YAML::Key << "train_fraction" << YAML::Value << YAML::Precision(17) << o.train_fraction;
    y << YAML::Key << "view_stride" << YAML::Value << o.view_stride << YAML::Key << "pose_stride" << YAML::Value
      << o.pose_stride;
    y << YAML::Key << "relight_stride" << YAML::Value << o.relight_stride << YAML::Key << "samples" << YAML::Value
      << o.samples;
    y << YAML::Key << "wrinkle" << YAML::Value << o.wrinkle;
    y << YAML::EndMap;
    y << YAML::Key << "records" << YAML::Value << YAML::BeginSeq;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameRecord &f = ds.frames[i];
        y << YAML::Flow << YAML::BeginMap << YAML::Key << "file" << YAML::Value << detail::frame_stem(i)
          << YAML::Key << "time" << YAML::Value << f.time << YAML::Key << "camera" << YAML::Value << f.camera
          << YAML::Key << "split" << YAML::Value << to_string(f.split) << YAML::EndMap;
    }
    y << YAML::EndSeq << YAML::EndMap;
    std::ofstream(dir / "manifest.yaml") << y.c_str() << '\n';

    skinning::write_pose_file(dir / "poses.txt", ds.poses);
    write_cameras(dir / "cameras.txt", ds.cameras);
    sh::save_probe(dir / "probe.pfm", ds.probe);
    sh::save_probe(dir / "relight_probe.pfm", ds.relight_probe);
    std::size_t s = o.image_size;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameRecord &f = ds.frames[i];
        fs::path stem = dir / "frames" / detail::frame_stem(i);
        io::write_pfm(stem.string() + "_rgb.pfm", detail::to_pfm(f.rgb, s, s, 3));
        io::write_pfm(stem.string() + "_normal.pfm", detail::to_pfm(f.normal, s, s, 3));
        io::write_pfm(stem.string() + "_alpha.pfm", detail::to_pfm(f.alpha, s, s, 1));
    }
}

/// Reads a dataset written by export_scene. The figure and deformation
/// field are regenerated from the recorded seed.
inline SceneDataset import_scene(const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    fs::path mpath = dir / "manifest.yaml";
    if (!fs::exists(mpath)) throw IoError("missing scene manifest: " + mpath.string());
    YAML::Node m;
    try {
        m = YAML::LoadFile(mpath.string());
    } catch (const YAML::Exception &e) {
        throw IoError("corrupt scene manifest " + mpath.string() + ": " + e.what());
    }
    SceneOptions o;
    std::uint64_t seed = 0;
    std::vector<std::tuple<std::string, std::size_t, std::size_t, Split>> records;
    try {
        if (m["format"].as<std::string>() != kSceneFormat)
            throw IoError("unsupported scene format in " + mpath.string());
        seed = m["seed"].as<std::uint64_t>();
        const YAML::Node &n = m["options"];
        o.joints = n["joints"].as<std::size_t>();
        o.frames = n["frames"].as<std::size_t>();
        o.cameras = n["cameras"].as<std::size_t>();
        o.image_size = n["image_size"].as<std::size_t>();
        o.window = n["window"].as<std::size_t>();
        o.train_fraction = n["train_fraction"].as<double>();
        o.view_stride = n["view_stride"].as<std::size_t>();
        o.pose_stride = n["pose_stride"].as<std::size_t>();
        o.relight_stride = n["relight_stride"].as<std::size_t>();
        o.samples = n["samples"].as<std::size_t>();
        o.wrinkle = n["wrinkle"].as<bool>();
        for (const auto &r : m["records"])
            records.emplace_back(r["file"].as<std::string>(), r["time"].as<std::size_t>(), r["camera"].as<std::size_t>(),
                                 parse_split(r["split"].as<std::string>()));
    } catch (const YAML::Exception &e) {
        throw IoError("corrupt scene manifest " + mpath.string() + ": " + e.what());
    }
    SceneDataset ds = scene_setup(seed, o);
    ds.poses = skinning::read_pose_file(dir / "poses.txt");
    if (ds.poses.joints != o.joints || ds.poses.size() != o.frames)
        throw IoError("poses.txt does not match the manifest (joints/frames)");
    ds.cameras = read_cameras(dir / "cameras.txt");
    if (ds.cameras.size() != o.cameras) throw IoError("cameras.txt has " + std::to_string(ds.cameras.size()) +
                                                      " cameras, manifest says " + std::to_string(o.cameras));
    ds.probe = sh::load_probe(dir / "probe.pfm");
    ds.relight_probe = sh::load_probe(dir / "relight_probe.pfm");
    std::size_t s = o.image_size;
    for (const auto &[file, t, c, split] : records) {
        if (t >= o.frames || c >= o.cameras) throw IoError("record " + file + " refers to a missing frame or camera");
        fs::path stem = dir / "frames" / file;
        ds.frames.push_back({t, c, split, detail::from_pfm(stem.string() + "_rgb.pfm", s, s, 3),
                             detail::from_pfm(stem.string() + "_normal.pfm", s, s, 3),
                             detail::from_pfm(stem.string() + "_alpha.pfm", s, s, 1)});
    }
    return ds;
}

/// FNV-1a 64 over every file under `dir` (relative paths and contents, in
/// sorted order).
inline std::uint64_t directory_checksum(const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](unsigned char b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (const auto &f : files) {
        for (char ch : f.generic_string()) mix(static_cast<unsigned char>(ch));
        mix(0);
        std::ifstream in(dir / f, std::ios::binary);
        std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        for (char ch : buf) mix(static_cast<unsigned char>(ch));
    }
    return h;
}

} // namespace rnda::synth
