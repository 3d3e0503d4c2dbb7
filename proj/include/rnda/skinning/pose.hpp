// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/core/tensor.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace rnda::skinning {

/// Axis-angle joint rotations for every frame of an animation.
struct PoseTrack {
    std::size_t joints = 0;
    std::vector<std::vector<Vec3>> frames; ///< frames[f][j]

    std::size_t size() const { return frames.size(); }
    friend bool operator==(const PoseTrack &, const PoseTrack &) = default;
};

/// d x J x 3 window of consecutive poses, oldest first; the last slice is
/// the current pose.
struct PoseSequence {
    ad::Tensor theta;

    std::size_t window() const { return theta.dim(0); }
    std::size_t joints() const { return theta.dim(1); }

    /// Current pose as a J x 3 tensor.
    ad::Tensor current() const { return frame(window() - 1); }
    ad::Tensor frame(std::size_t k) const {
        std::size_t j = joints();
        ad::Tensor out({j, 3});
        std::copy_n(theta.data() + k * j * 3, j * 3, out.data());
        return out;
    }
};

inline void validate(const PoseSequence &s) {
    if (s.theta.rank() != 3 || s.theta.dim(2) != 3) throw Error("pose sequence must be d x J x 3");
    if (s.window() < 2) throw Error("pose sequence window must be at least 2, got " + std::to_string(s.window()));
    for (std::size_t i = 0; i < s.theta.size(); i += 3) {
        double m = std::sqrt(s.theta[i] * s.theta[i] + s.theta[i + 1] * s.theta[i + 1] +
                             s.theta[i + 2] * s.theta[i + 2]);
        if (!(m < 2.0 * std::numbers::pi)) throw Error("axis-angle magnitude must be below 2 pi");
    }
}

/// The `d` poses ending at frame `t`; frames before the start repeat frame 0.
inline PoseSequence window_at(const PoseTrack &track, std::size_t t, std::size_t d) {
    if (d < 2) throw Error("pose window must be at least 2");
    if (t >= track.size()) throw Error("frame index out of range");
    PoseSequence s{ad::Tensor({d, track.joints, 3})};
    for (std::size_t k = 0; k < d; ++k) {
        long f = static_cast<long>(t) - static_cast<long>(d - 1 - k);
        const auto &pose = track.frames[static_cast<std::size_t>(std::max(0L, f))];
        for (std::size_t j = 0; j < track.joints; ++j)
            for (int c = 0; c < 3; ++c) s.theta[(k * track.joints + j) * 3 + c] = pose[j][c];
    }
    return s;
}

/// Bone hierarchy with rest-pose joint positions (parents precede children).
struct Skeleton {
    std::vector<int> parents;   ///< -1 for the root
    std::vector<Vec3> rest;     ///< joint positions in the rest pose

    std::size_t joints() const { return parents.size(); }
};

/// Per-joint rigid transforms, J x 3 x 4 ([R | t] row-major), mapping
/// rest-pose points to posed points.
using JointTransforms = ad::Tensor;

/// Forward kinematics: global joint frames G_k, then G_k * G_k,rest^-1.
inline JointTransforms forward_kinematics(const Skeleton &sk, const std::vector<Vec3> &pose,
                                          const Vec3 &root_translation = {0, 0, 0}) {
    std::size_t J = sk.joints();
    if (pose.size() != J) throw Error("pose has " + std::to_string(pose.size()) + " joints, skeleton " +
                                      std::to_string(J));
    std::vector<Mat3> Rg(J);
    std::vector<Vec3> tg(J);
    for (std::size_t k = 0; k < J; ++k) {
        Mat3 local = axis_angle_to_rotmat(pose[k]);
        int p = sk.parents[k];
        if (p < 0) {
            Rg[k] = local;
            tg[k] = add3(sk.rest[k], root_translation);
        } else {
            if (static_cast<std::size_t>(p) >= k) throw Error("skeleton parents must precede children");
            Rg[k] = matmul3(Rg[p], local);
            tg[k] = add3(tg[p], mul3(Rg[p], sub3(sk.rest[k], sk.rest[p])));
        }
    }
    JointTransforms out({J, 3, 4});
    for (std::size_t k = 0; k < J; ++k) {
        Vec3 t = sub3(tg[k], mul3(Rg[k], sk.rest[k]));
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out[k * 12 + r * 4 + c] = Rg[k][r * 3 + c];
            out[k * 12 + r * 4 + 3] = t[r];
        }
    }
    return out;
}

/// Text pose file: "J F" header, then one line of J x 3 radians per frame.
inline void write_pose_file(const std::filesystem::path &path, const PoseTrack &track) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << track.joints << ' ' << track.size() << '\n' << std::setprecision(17);
    for (const auto &pose : track.frames) {
        for (std::size_t j = 0; j < track.joints; ++j)
            out << (j ? " " : "") << pose[j][0] << ' ' << pose[j][1] << ' ' << pose[j][2];
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline PoseTrack read_pose_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open pose file: " + path.string());
    PoseTrack track;
    std::size_t frames = 0;
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty pose file: " + path.string());
    std::istringstream header(line);
    if (!(header >> track.joints >> frames) || track.joints == 0)
        throw IoError("bad pose file header (expected \"J F\"): " + path.string());
    for (std::size_t f = 0; f < frames; ++f) {
        if (!std::getline(in, line)) throw IoError("pose file has fewer frames than its header: " + path.string());
        std::istringstream row(line);
        std::vector<Vec3> pose(track.joints);
        for (auto &aa : pose)
            if (!(row >> aa[0] >> aa[1] >> aa[2]))
                throw IoError("pose file line " + std::to_string(f + 2) + " has fewer than J x 3 values");
        double extra;
        if (row >> extra) throw IoError("pose file line " + std::to_string(f + 2) + " has extra values");
        track.frames.push_back(std::move(pose));
    }
    return track;
}

} // namespace rnda::skinning
