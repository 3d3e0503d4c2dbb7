// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/quaternion.hpp>

#include <cmath>
#include <cstddef>

namespace rnda::raster {

/// Pinhole camera with an OpenCV-style frame (x right, y down, z forward).
/// World-to-camera: p_cam = rotation * p_world + translation.
struct Camera {
    Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 translation{0, 0, 0};
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    std::size_t width = 0, height = 0;
    Vec3 target{0, 0, 0}; ///< look-at point, kept for view augmentation

    Vec3 center() const { return scale3(mul3(transpose3(rotation), translation), -1.0); }

    Vec3 to_camera(const Vec3 &p) const { return add3(mul3(rotation, p), translation); }

    /// Camera at `eye` looking at `target`. `up` is a world hint; when it is
    /// parallel to the viewing direction another axis is substituted.
    static Camera look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double fx, double fy,
                          std::size_t width, std::size_t height) {
        if (!(fx > 0) || !(fy > 0)) throw Error("camera focal lengths must be positive");
        Vec3 f = normalize3(sub3(target, eye));
        Vec3 r = cross3(f, up);
        if (norm3(r) < 1e-9) r = cross3(f, std::abs(f[1]) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0});
        r = normalize3(r);
        Vec3 d = cross3(f, r);
        Camera c;
        c.rotation = {r[0], r[1], r[2], d[0], d[1], d[2], f[0], f[1], f[2]};
        c.translation = scale3(mul3(c.rotation, eye), -1.0);
        c.fx = fx;
        c.fy = fy;
        c.width = width;
        c.height = height;
        c.cx = static_cast<double>(width) / 2.0;
        c.cy = static_cast<double>(height) / 2.0;
        c.target = target;
        return c;
    }
};

} // namespace rnda::raster
