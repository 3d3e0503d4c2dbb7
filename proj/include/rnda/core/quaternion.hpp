// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/ops.hpp>

#include <array>
#include <cmath>

namespace rnda {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>; // row-major

/// Unit quaternion (w, x, y, z).
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quaternion normalized() const {
        double n = norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw Error("cannot normalize a zero-norm quaternion");
        return {w / n, x / n, y / n, z / n};
    }
};

/// Rotation matrix of a unit quaternion with entries expressed in its components.
/// Shared by the scalar conversion and the batched tape op.
inline Mat3 rotmat_of_unit(double w, double x, double y, double z) {
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

/// Normalizes `q` first, since optimizer updates drift off the unit sphere.
inline Mat3 quat_to_rotmat(const Quaternion &q) {
    Quaternion u = q.normalized();
    return rotmat_of_unit(u.w, u.x, u.y, u.z);
}

inline Mat3 matmul3(const Mat3 &a, const Mat3 &b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            r[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
    return r;
}

inline Mat3 transpose3(const Mat3 &a) { return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]}; }

inline Vec3 mul3(const Mat3 &a, const Vec3 &v) {
    return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
            a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

inline double det3(const Mat3 &a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6]);
}

inline double dot3(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross3(const Vec3 &a, const Vec3 &b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm3(const Vec3 &a) { return std::sqrt(dot3(a, a)); }
inline Vec3 sub3(const Vec3 &a, const Vec3 &b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 add3(const Vec3 &a, const Vec3 &b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 scale3(const Vec3 &a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline Vec3 normalize3(const Vec3 &a) {
    double n = norm3(a);
    if (!(n > 0.0)) throw Error("cannot normalize a zero vector");
    return scale3(a, 1.0 / n);
}

/// Rodrigues rotation of an axis-angle vector (radians).
inline Mat3 axis_angle_to_rotmat(const Vec3 &aa) {
    double th = norm3(aa);
    if (th < 1e-12) {
        // first-order expansion keeps the map smooth at zero
        return {1, -aa[2], aa[1], aa[2], 1, -aa[0], -aa[1], aa[0], 1};
    }
    Vec3 k = scale3(aa, 1.0 / th);
    double c = std::cos(th), s = std::sin(th), t = 1 - c;
    return {t * k[0] * k[0] + c,        t * k[0] * k[1] - s * k[2], t * k[0] * k[2] + s * k[1],
            t * k[0] * k[1] + s * k[2], t * k[1] * k[1] + c,        t * k[1] * k[2] - s * k[0],
            t * k[0] * k[2] - s * k[1], t * k[1] * k[2] + s * k[0], t * k[2] * k[2] + c};
}

namespace ad {

/// Batched quaternion (N x 4, any norm) to rotation matrices (N x 3 x 3).
/// Each row is normalized inside the op; zero rows map to the identity.
inline Var quat_to_rotmat(Var q) {
    const Shape &s = q.shape();
    if (s.size() != 2 || s[1] != 4) q.tape().shape_error("quat_to_rotmat", "expects N x 4, got " + to_string(s));
    std::size_t n = s[0];
    return q.tape().record(
        "quat_to_rotmat", {q},
        [n](InputValues in) {
            Tensor out({n, 3, 3});
            for (std::size_t i = 0; i < n; ++i) {
                const double *p = in[0]->data() + 4 * i;
                double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]);
                Mat3 r = len < 1e-12 ? Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}
                                     : rotmat_of_unit(p[0] / len, p[1] / len, p[2] / len, p[3] / len);
                std::copy(r.begin(), r.end(), out.data() + 9 * i);
            }
            return out;
        },
        [n](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < n; ++i) {
                const double *p = in[0]->data() + 4 * i;
                double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]);
                if (len < 1e-12) continue;
                double w = p[0] / len, x = p[1] / len, y = p[2] / len, z = p[3] / len;
                const double *G = g.data() + 9 * i;
                // d R / d (w, x, y, z) contracted with G
                double gw = 2 * (-z * G[1] + y * G[2] + z * G[3] - x * G[5] - y * G[6] + x * G[7]);
                double gx = 2 * (y * G[1] + z * G[2] + y * G[3] - 2 * x * G[4] - w * G[5] + z * G[6] + w * G[7] -
                                 2 * x * G[8]);
                double gy = 2 * (-2 * y * G[0] + x * G[1] + w * G[2] + x * G[3] + z * G[5] - w * G[6] + z * G[7] -
                                 2 * y * G[8]);
                double gz = 2 * (-2 * z * G[0] - w * G[1] + x * G[2] + w * G[3] - 2 * z * G[4] + y * G[5] +
                                 x * G[6] + y * G[7]);
                double u[4] = {w, x, y, z}, gu[4] = {gw, gx, gy, gz};
                double dot = gu[0] * u[0] + gu[1] * u[1] + gu[2] * u[2] + gu[3] * u[3];
                for (int c = 0; c < 4; ++c) (*gr[0])[4 * i + c] += (gu[c] - u[c] * dot) / len;
            }
        });
}

} // namespace ad
} // namespace rnda
