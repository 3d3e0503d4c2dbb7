// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/quaternion.hpp>
#include <rnda/core/rng.hpp>
#include <rnda/core/tensor.hpp>
#include <rnda/raster/camera.hpp>

#include <cmath>
#include <numbers>

namespace rnda::testing {

inline ad::Tensor random_tensor(Rng &rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
    ad::Tensor t(std::move(shape));
    for (double &v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline ad::Tensor normal_tensor(Rng &rng, ad::Shape shape, double sd = 1.0) {
    ad::Tensor t(std::move(shape));
    for (double &v : t.values()) v = rng.normal(0.0, sd);
    return t;
}

inline Vec3 random_unit(Rng &rng) {
    double z = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double r = std::sqrt(1.0 - z * z);
    return {r * std::cos(phi), r * std::sin(phi), z};
}

/// Camera on the -y axis looking at the origin, z up.
inline raster::Camera test_camera(std::size_t size = 32, double distance = 4.0) {
    double f = 1.2 * static_cast<double>(size);
    return raster::Camera::look_at({0, -distance, 0}, {0, 0, 0}, {0, 0, 1}, f, f, size, size);
}

/// Random anisotropic Gaussians near the origin.
struct RandomScene {
    ad::Tensor means, cov, opacity, payload, quats, scales;
};

inline RandomScene random_scene(Rng &rng, std::size_t n, std::size_t channels = 3, double spread = 0.8,
                                double min_scale = 0.03, double max_scale = 0.25) {
    RandomScene s{ad::Tensor({n, 3}),        ad::Tensor({n, 3, 3}), ad::Tensor({n, 1}),
                  ad::Tensor({n, channels}), ad::Tensor({n, 4}),    ad::Tensor({n, 3})};
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) s.means[3 * i + k] = rng.uniform(-spread, spread);
        Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        q = q.normalized();
        s.quats[4 * i] = q.w;
        s.quats[4 * i + 1] = q.x;
        s.quats[4 * i + 2] = q.y;
        s.quats[4 * i + 3] = q.z;
        Mat3 r = quat_to_rotmat(q);
        Vec3 sc{rng.uniform(min_scale, max_scale), rng.uniform(min_scale, max_scale),
                rng.uniform(min_scale, max_scale)};
        for (int k = 0; k < 3; ++k) s.scales[3 * i + k] = sc[k];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double v = 0.0;
                for (int k = 0; k < 3; ++k) v += r[a * 3 + k] * sc[k] * sc[k] * r[b * 3 + k];
                s.cov[9 * i + 3 * a + b] = v;
            }
        s.opacity[i] = rng.uniform(0.05, 0.99);
        for (std::size_t c = 0; c < channels; ++c) s.payload[i * channels + c] = rng.uniform(0.0, 1.0);
    }
    return s;
}

} // namespace rnda::testing
