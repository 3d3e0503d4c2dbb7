// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/core/rng.hpp>
#include <rnda/core/tensor.hpp>
#include <rnda/skinning/pose.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace rnda::synth {

/// A bone as a capsule: segment from `start` along `dir` of `length`.
struct Bone {
    Vec3 start;
    Vec3 dir;
    double length;
    double radius;
};

/// Procedural articulated figure with ground-truth surface attributes.
struct Figure {
    skinning::Skeleton skeleton;
    std::vector<Bone> bones;      ///< one per joint
    std::vector<Vec3> vertices;   ///< rest-pose surface samples
    std::vector<Vec3> normals;    ///< outward unit normals
    ad::Tensor weights;           ///< N x J ground-truth base skinning weights
    ad::Tensor albedo;            ///< N x 3
    ad::Tensor roughness;         ///< N x 1
    ad::Tensor opacity;           ///< N x 1
    ad::Tensor quaternion;        ///< N x 4, (w, x, y, z)
    ad::Tensor scale;             ///< N x 3
    double weight_falloff = 0.0;  ///< sigma of the distance falloff (m)

    std::size_t size() const { return vertices.size(); }
    std::size_t joints() const { return skeleton.joints(); }

    double mean_bone_length() const {
        double s = 0;
        for (const Bone &b : bones) s += b.length;
        return s / static_cast<double>(bones.size());
    }

    friend bool operator==(const Figure &a, const Figure &b) {
        auto same_bones = [&] {
            for (std::size_t i = 0; i < a.bones.size(); ++i)
                if (a.bones[i].start != b.bones[i].start || a.bones[i].dir != b.bones[i].dir ||
                    a.bones[i].length != b.bones[i].length || a.bones[i].radius != b.bones[i].radius)
                    return false;
            return true;
        };
        return a.skeleton.parents == b.skeleton.parents && a.skeleton.rest == b.skeleton.rest &&
               a.bones.size() == b.bones.size() && same_bones() && a.vertices == b.vertices &&
               a.normals == b.normals && a.weights == b.weights && a.albedo == b.albedo &&
               a.roughness == b.roughness && a.opacity == b.opacity && a.quaternion == b.quaternion &&
               a.scale == b.scale && a.weight_falloff == b.weight_falloff;
    }
};

/// Distance from `p` to a bone's axis segment.
inline double bone_distance(const Bone &b, const Vec3 &p) {
    double t = std::clamp(dot3(sub3(p, b.start), b.dir), 0.0, b.length);
    return norm3(sub3(p, add3(b.start, scale3(b.dir, t))));
}

/// Normalized Gaussian falloff of bone distances: one row of weights.
inline std::vector<double> falloff_weights(const std::vector<Bone> &bones, const Vec3 &p, double sigma) {
    std::vector<double> d(bones.size()), w(bones.size());
    for (std::size_t k = 0; k < bones.size(); ++k) d[k] = bone_distance(bones[k], p);
    double dmin = *std::min_element(d.begin(), d.end());
    double s = 0;
    for (std::size_t k = 0; k < bones.size(); ++k) s += (w[k] = std::exp(-(d[k] * d[k] - dmin * dmin) / (2 * sigma * sigma)));
    for (double &v : w) v /= s;
    return w;
}

/// Template skinning weights from bone proximity with an inverse-distance
/// falloff. Plays the role of a body model's stock weights: close to, but not
/// equal to, the ground truth.
inline ad::Tensor template_weights(const std::vector<Bone> &bones, const std::vector<Vec3> &vertices) {
    std::size_t n = vertices.size(), J = bones.size();
    ad::Tensor w({n, J});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < J; ++k) s += (w[i * J + k] = 1.0 / std::pow(bone_distance(bones[k], vertices[i]) + 0.02, 4));
        for (std::size_t k = 0; k < J; ++k) w[i * J + k] /= s;
    }
    return w;
}

namespace detail {
// Quaternion rotating +z onto unit vector n.
inline Quaternion align_z(const Vec3 &n) {
    Vec3 z{0, 0, 1};
    double c = dot3(z, n);
    if (c < -1 + 1e-12) return {0, 1, 0, 0};
    Vec3 a = cross3(z, n);
    Quaternion q{1 + c, a[0], a[1], a[2]};
    return q.normalized();
}

inline Vec3 any_perpendicular(const Vec3 &d) {
    Vec3 p = std::abs(d[2]) < 0.9 ? cross3(d, {0, 0, 1}) : cross3(d, {1, 0, 0});
    return normalize3(p);
}
} // namespace detail

/// Builds a figure with `joints` joints: a root and torso, then limbs hung
/// off the torso and root, with ~`samples` capsule surface samples.
inline Figure generate_figure(std::uint64_t seed, std::size_t joints, std::size_t samples = 500) {
    if (joints < 2) throw Error("figure needs at least 2 joints, got " + std::to_string(joints));
    Rng rng(seed);
    auto jitter = [&](double v, double rel) { return v * (1.0 + rng.uniform(-rel, rel)); };
    Figure f;
    auto &sk = f.skeleton;
    // Root (pelvis) and torso.
    sk.parents = {-1, 0};
    sk.rest = {{0, 0, 0.4}};
    f.bones.push_back({{0, 0, 0.4}, {0, 0, 1}, jitter(0.32, 0.1), 0.12});
    sk.rest.push_back(add3(sk.rest[0], {0, 0, f.bones[0].length}));
    f.bones.push_back({sk.rest[1], {0, 0, 1}, jitter(0.28, 0.1), 0.1});
    for (std::size_t k = 2; k < joints; ++k) {
        std::size_t group = (k - 2) % 4; // 0,1 arms; 2,3 legs
        double side = group % 2 == 0 ? 1.0 : -1.0;
        Vec3 dir, anchor;
        int parent;
        if (k >= 6) {
            parent = static_cast<int>(k - 4);
            const Bone &pb = f.bones[static_cast<std::size_t>(parent)];
            anchor = add3(pb.start, scale3(pb.dir, pb.length));
            dir = pb.dir;
        } else if (group < 2) {
            parent = 1;
            anchor = add3(sk.rest[1], {side * 0.14, 0, -0.03});
            dir = normalize3({side, rng.uniform(-0.15, 0.15), -0.35});
        } else {
            parent = 0;
            anchor = add3(sk.rest[0], {side * 0.09, 0, -0.02});
            dir = normalize3({side * 0.25, rng.uniform(-0.1, 0.1), -1.0});
        }
        sk.parents.push_back(parent);
        sk.rest.push_back(anchor);
        f.bones.push_back({anchor, dir, jitter(group < 2 ? 0.36 : 0.38, 0.1), group < 2 ? 0.055 : 0.065});
    }

    // Surface samples, allotted by capsule area.
    std::vector<double> area;
    double total = 0;
    for (const Bone &b : f.bones) total += area.emplace_back(2 * std::numbers::pi * b.radius * b.length + 4 * std::numbers::pi * b.radius * b.radius);
    for (std::size_t k = 0; k < f.bones.size(); ++k) {
        const Bone &b = f.bones[k];
        auto count = static_cast<std::size_t>(std::lround(static_cast<double>(samples) * area[k] / total));
        Vec3 u = detail::any_perpendicular(b.dir), v = cross3(b.dir, u);
        double side_area = 2 * std::numbers::pi * b.radius * b.length;
        for (std::size_t i = 0; i < count; ++i) {
            double phi = rng.uniform(0, 2 * std::numbers::pi);
            Vec3 radial = add3(scale3(u, std::cos(phi)), scale3(v, std::sin(phi)));
            Vec3 p, n;
            if (rng.uniform() * area[k] < side_area) {
                double t = rng.uniform(0, b.length);
                n = radial;
                p = add3(add3(b.start, scale3(b.dir, t)), scale3(n, b.radius));
            } else {
                // Hemispherical cap at either end.
                double z = rng.uniform(0, 1);
                double r = std::sqrt(1 - z * z);
                bool top = rng.uniform() < 0.5;
                Vec3 axis = top ? b.dir : scale3(b.dir, -1);
                Vec3 center = top ? add3(b.start, scale3(b.dir, b.length)) : b.start;
                n = normalize3(add3(scale3(radial, r), scale3(axis, z)));
                p = add3(center, scale3(n, b.radius));
            }
            f.vertices.push_back(p);
            f.normals.push_back(n);
        }
    }

    std::size_t n = f.vertices.size(), J = joints;
    f.weight_falloff = 0.06;
    f.weights = ad::Tensor({n, J});
    f.albedo = ad::Tensor({n, 3});
    f.roughness = ad::Tensor({n, 1});
    f.opacity = ad::Tensor({n, 1});
    f.quaternion = ad::Tensor({n, 4});
    f.scale = ad::Tensor({n, 3});
    std::vector<Vec3> palette(J);
    for (auto &c : palette) c = {rng.uniform(0.25, 0.85), rng.uniform(0.25, 0.85), rng.uniform(0.25, 0.85)};
    // Mean nearest-neighbour spacing sets the splat size.
    double spacing = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = 1e9;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) best = std::min(best, norm3(sub3(f.vertices[i], f.vertices[j])));
        spacing += best;
    }
    spacing /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 &p = f.vertices[i];
        auto w = falloff_weights(f.bones, p, f.weight_falloff);
        std::size_t top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        for (std::size_t k = 0; k < J; ++k) f.weights[i * J + k] = w[k];
        double stripe = 0.15 * std::sin(9.0 * p[2] + 5.0 * p[0]);
        for (int c = 0; c < 3; ++c) f.albedo[3 * i + c] = std::clamp(palette[top][c] + stripe, 0.05, 0.95);
        f.roughness[i] = 0.35 + 0.3 * (0.5 + 0.5 * std::sin(6.0 * p[1] + 4.0 * p[2]));
        f.opacity[i] = 0.95;
        Quaternion q = detail::align_z(f.normals[i]);
        f.quaternion[4 * i] = q.w;
        f.quaternion[4 * i + 1] = q.x;
        f.quaternion[4 * i + 2] = q.y;
        f.quaternion[4 * i + 3] = q.z;
        f.scale[3 * i] = f.scale[3 * i + 1] = 1.1 * spacing;
        f.scale[3 * i + 2] = 0.35 * spacing;
    }
    return f;
}

} // namespace rnda::synth
