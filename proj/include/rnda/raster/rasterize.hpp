// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/ops.hpp>
#include <rnda/core/quaternion.hpp>
#include <rnda/raster/camera.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rnda::raster {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceFloor = 0.3; // pixels^2, added to the 2D covariance diagonal
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr std::size_t kTileSize = 16;

enum class Channel { rgb, normal, albedo, mask, other };

/// H x W x C image plus coverage.
struct RenderedImage {
    std::size_t width = 0, height = 0, channels = 0;
    ad::Tensor color; ///< H x W x C
    ad::Tensor alpha; ///< H x W
    Channel semantics = Channel::other;
};

/// A projected Gaussian. The covariance includes the isotropic floor.
struct Splat2D {
    double mean_x = 0, mean_y = 0;
    double cov_xx = 0, cov_xy = 0, cov_yy = 0;
    double depth = 0;
    double opacity = 0;
    std::vector<double> payload;
    std::size_t index = 0;
};

namespace detail {

// Projection intermediates reused by the backward pass.
struct Projection {
    Vec3 t;                 // camera-space center
    double J[2][3];         // perspective Jacobian at t
    Mat3 V;                 // camera-space 3D covariance
    double a, b, c;         // 2D covariance (floored)
    double ka, kb, kc;      // its inverse
    double mx, my;
    double radius;          // pixels within which alpha can reach kMinAlpha
};

inline std::optional<Projection> project_one(const Vec3 &mean, const Mat3 &cov, double opacity, const Camera &cam) {
    Projection p;
    p.t = cam.to_camera(mean);
    if (p.t[2] <= kNearPlane) return std::nullopt;
    double tz = p.t[2];
    p.J[0][0] = cam.fx / tz;
    p.J[0][1] = 0.0;
    p.J[0][2] = -cam.fx * p.t[0] / (tz * tz);
    p.J[1][0] = 0.0;
    p.J[1][1] = cam.fy / tz;
    p.J[1][2] = -cam.fy * p.t[1] / (tz * tz);
    p.V = matmul3(matmul3(cam.rotation, cov), transpose3(cam.rotation));
    double s[2][2];
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) acc += p.J[i][k] * p.V[k * 3 + l] * p.J[j][l];
            s[i][j] = acc;
        }
    p.a = s[0][0] + kCovarianceFloor;
    p.b = s[0][1];
    p.c = s[1][1] + kCovarianceFloor;
    double det = p.a * p.c - p.b * p.b;
    if (!(det > 0.0)) throw NumericError("singular 2D covariance after flooring");
    p.ka = p.c / det;
    p.kb = -p.b / det;
    p.kc = p.a / det;
    p.mx = cam.fx * p.t[0] / tz + cam.cx;
    p.my = cam.fy * p.t[1] / tz + cam.cy;
    double mid = 0.5 * (p.a + p.c);
    double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
    double level = 2.0 * std::log(255.0 * opacity);
    p.radius = level > 0.0 ? std::sqrt(level * lmax) + 1.0 : -1.0;
    return p;
}

inline double splat_alpha(double opacity, double ka, double kb, double kc, double dx, double dy, double &falloff) {
    double power = -0.5 * (ka * dx * dx + 2.0 * kb * dx * dy + kc * dy * dy);
    falloff = std::exp(power);
    return opacity * falloff;
}

// Splat fields the compositor needs, independent of where the payload lives.
struct Prepared {
    double mx, my, ka, kb, kc, depth, opacity, radius;
    std::size_t index;
    const double *payload;
};

inline bool depth_order(const Prepared &a, const Prepared &b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

// Tile lists of splats (indices into `sorted`) in depth order.
inline std::vector<std::vector<std::size_t>> bin_tiles(const std::vector<Prepared> &sorted, std::size_t w,
                                                       std::size_t h) {
    std::size_t tw = (w + kTileSize - 1) / kTileSize, th = (h + kTileSize - 1) / kTileSize;
    std::vector<std::vector<std::size_t>> tiles(tw * th);
    for (std::size_t s = 0; s < sorted.size(); ++s) {
        const Prepared &p = sorted[s];
        if (p.radius <= 0.0) continue;
        double x0 = std::ceil(p.mx - p.radius), x1 = std::floor(p.mx + p.radius);
        double y0 = std::ceil(p.my - p.radius), y1 = std::floor(p.my + p.radius);
        if (x1 < 0 || y1 < 0 || x0 > static_cast<double>(w) - 1 || y0 > static_cast<double>(h) - 1) continue;
        auto tx0 = static_cast<std::size_t>(std::max(0.0, x0)) / kTileSize;
        auto ty0 = static_cast<std::size_t>(std::max(0.0, y0)) / kTileSize;
        auto tx1 = static_cast<std::size_t>(std::min(static_cast<double>(w) - 1, x1)) / kTileSize;
        auto ty1 = static_cast<std::size_t>(std::min(static_cast<double>(h) - 1, y1)) / kTileSize;
        for (std::size_t ty = ty0; ty <= ty1; ++ty)
            for (std::size_t tx = tx0; tx <= tx1; ++tx) tiles[ty * tw + tx].push_back(s);
    }
    return tiles;
}

// Front-to-back compositing of one pixel over an ordered candidate list.
template <class Candidates>
inline void composite_pixel(const std::vector<Prepared> &sorted, const Candidates &cand, double px, double py,
                            std::size_t channels, double *out_color, double &out_alpha) {
    double T = 1.0;
    for (std::size_t s : cand) {
        const Prepared &p = sorted[s];
        double g;
        double a = splat_alpha(p.opacity, p.ka, p.kb, p.kc, px - p.mx, py - p.my, g);
        if (a < kMinAlpha) continue;
        for (std::size_t c = 0; c < channels; ++c) out_color[c] += p.payload[c] * a * T;
        T *= 1.0 - a;
    }
    out_alpha = 1.0 - T;
}

inline std::vector<Prepared> prepare(std::span<const Splat2D> splats, std::size_t channels) {
    std::vector<Prepared> out;
    out.reserve(splats.size());
    for (const Splat2D &s : splats) {
        if (s.payload.size() != channels) throw Error("rasterize: splats carry payloads of different widths");
        double det = s.cov_xx * s.cov_yy - s.cov_xy * s.cov_xy;
        if (!(det > 0.0)) throw NumericError("rasterize: singular 2D covariance");
        double mid = 0.5 * (s.cov_xx + s.cov_yy);
        double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
        double level = 2.0 * std::log(255.0 * s.opacity);
        out.push_back({s.mean_x, s.mean_y, s.cov_yy / det, -s.cov_xy / det, s.cov_xx / det, s.depth, s.opacity,
                       level > 0.0 ? std::sqrt(level * lmax) + 1.0 : -1.0, s.index, s.payload.data()});
    }
    return out;
}

inline RenderedImage blank(std::size_t w, std::size_t h, std::size_t c) {
    RenderedImage img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.color = ad::Tensor({h, w, c});
    img.alpha = ad::Tensor({h, w});
    return img;
}

} // namespace detail

/// Projects one posed Gaussian; nullopt when it lies behind the near plane.
inline std::optional<Splat2D> project(const Vec3 &mean, const Mat3 &cov, double opacity, std::vector<double> payload,
                                      std::size_t index, const Camera &cam) {
    auto p = detail::project_one(mean, cov, opacity, cam);
    if (!p) return std::nullopt;
    return Splat2D{p->mx, p->my, p->a, p->b, p->c, p->t[2], opacity, std::move(payload), index};
}

/// Tiled front-to-back compositing. Splats are depth-sorted (ties by index).
inline RenderedImage rasterize(std::span<const Splat2D> splats, const Camera &cam) {
    std::size_t channels = splats.empty() ? 0 : splats.front().payload.size();
    std::vector<detail::Prepared> sorted = detail::prepare(splats, channels);
    std::sort(sorted.begin(), sorted.end(), detail::depth_order);
    auto tiles = detail::bin_tiles(sorted, cam.width, cam.height);
    RenderedImage img = detail::blank(cam.width, cam.height, channels);
    std::size_t tw = (cam.width + kTileSize - 1) / kTileSize;
    for (std::size_t y = 0; y < cam.height; ++y)
        for (std::size_t x = 0; x < cam.width; ++x) {
            const auto &list = tiles[(y / kTileSize) * tw + x / kTileSize];
            detail::composite_pixel(sorted, list, static_cast<double>(x), static_cast<double>(y), channels,
                                    img.color.data() + (y * cam.width + x) * channels, img.alpha[y * cam.width + x]);
        }
    return img;
}

/// Reference compositor: every splat is tested at every pixel, and the
/// contributing set is sorted per pixel.
inline RenderedImage rasterize_bruteforce(std::span<const Splat2D> splats, const Camera &cam) {
    std::size_t channels = splats.empty() ? 0 : splats.front().payload.size();
    std::vector<detail::Prepared> all = detail::prepare(splats, channels);
    RenderedImage img = detail::blank(cam.width, cam.height, channels);
    std::vector<detail::Prepared> hits;
    for (std::size_t y = 0; y < cam.height; ++y)
        for (std::size_t x = 0; x < cam.width; ++x) {
            hits.clear();
            for (const auto &p : all) {
                double g;
                double a = detail::splat_alpha(p.opacity, p.ka, p.kb, p.kc, x - p.mx, y - p.my, g);
                if (a >= kMinAlpha) hits.push_back(p);
            }
            std::sort(hits.begin(), hits.end(), detail::depth_order);
            double T = 1.0;
            double *out = img.color.data() + (y * cam.width + x) * channels;
            for (const auto &p : hits) {
                double g;
                double a = detail::splat_alpha(p.opacity, p.ka, p.kb, p.kc, x - p.mx, y - p.my, g);
                for (std::size_t c = 0; c < channels; ++c) out[c] += p.payload[c] * a * T;
                T *= 1.0 - a;
            }
            img.alpha[y * cam.width + x] = 1.0 - T;
        }
    return img;
}

namespace ad_ops {
using ad::InputGrads;
using ad::InputValues;
using ad::Tensor;
using ad::Var;

/// Differentiable splatting of N posed Gaussians.
/// means: N x 3, cov: N x 3 x 3, opacity: N x 1, payload: N x C.
/// Returns H x W x (C + 1); the last channel is alpha. The depth order is
/// treated as constant in the backward pass.
inline Var rasterize(Var means, Var cov, Var opacity, Var payload, const Camera &cam) {
    const auto &sm = means.shape();
    std::size_t n = sm.size() == 2 ? sm[0] : 0;
    if (sm.size() != 2 || sm[1] != 3 || cov.shape() != ad::Shape{n, 3, 3} || opacity.shape() != ad::Shape{n, 1} ||
        payload.shape().size() != 2 || payload.shape()[0] != n)
        means.tape().shape_error("rasterize", "means " + ad::to_string(sm) + " cov " + ad::to_string(cov.shape()) +
                                                  " opacity " + ad::to_string(opacity.shape()) + " payload " +
                                                  ad::to_string(payload.shape()));
    std::size_t C = payload.shape()[1];
    std::size_t W = cam.width, H = cam.height;

    // Shared by forward and backward: projection + sort + binning.
    struct Frame {
        std::vector<detail::Projection> proj;
        std::vector<detail::Prepared> sorted;
        std::vector<std::size_t> gaussian_of; // sorted slot -> Gaussian index
        std::vector<std::vector<std::size_t>> tiles;
    };
    auto build = [n, C, W, H, cam](InputValues in) {
        Frame f;
        f.proj.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            Vec3 m{(*in[0])[3 * i], (*in[0])[3 * i + 1], (*in[0])[3 * i + 2]};
            Mat3 cv;
            std::copy_n(in[1]->data() + 9 * i, 9, cv.begin());
            double o = (*in[2])[i];
            auto p = detail::project_one(m, cv, o, cam);
            if (!p) {
                f.proj[i].radius = -1.0;
                continue;
            }
            f.proj[i] = *p;
            if (p->radius <= 0.0) continue;
            f.sorted.push_back({p->mx, p->my, p->ka, p->kb, p->kc, p->t[2], o, p->radius, i, in[3]->data() + C * i});
        }
        std::sort(f.sorted.begin(), f.sorted.end(), detail::depth_order);
        for (const auto &p : f.sorted) f.gaussian_of.push_back(p.index);
        f.tiles = detail::bin_tiles(f.sorted, W, H);
        return f;
    };

    return means.tape().record(
        "rasterize", {means, cov, opacity, payload},
        [build, C, W, H](InputValues in) {
            Frame f = build(in);
            Tensor out({H, W, C + 1});
            std::size_t tw = (W + kTileSize - 1) / kTileSize;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    double *o = out.data() + (y * W + x) * (C + 1);
                    detail::composite_pixel(f.sorted, f.tiles[(y / kTileSize) * tw + x / kTileSize],
                                            static_cast<double>(x), static_cast<double>(y), C, o, o[C]);
                }
            return out;
        },
        [build, n, C, W, H, cam](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            Frame f = build(in);
            std::size_t tw = (W + kTileSize - 1) / kTileSize;
            // per-Gaussian accumulators: mean2d (2), conic (3)
            std::vector<double> g_mean2d(2 * n, 0.0), g_conic(3 * n, 0.0);
            struct Hit {
                std::size_t slot;
                double alpha, falloff, T, dx, dy;
            };
            std::vector<Hit> hits;
            std::vector<double> Rc(C);
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const double *go = g.data() + (y * W + x) * (C + 1);
                    bool any = false;
                    for (std::size_t c = 0; c <= C; ++c) any = any || go[c] != 0.0;
                    if (!any) continue;
                    hits.clear();
                    double T = 1.0;
                    for (std::size_t s : f.tiles[(y / kTileSize) * tw + x / kTileSize]) {
                        const auto &p = f.sorted[s];
                        double dx = x - p.mx, dy = y - p.my, fall;
                        double a = detail::splat_alpha(p.opacity, p.ka, p.kb, p.kc, dx, dy, fall);
                        if (a < kMinAlpha) continue;
                        hits.push_back({s, a, fall, T, dx, dy});
                        T *= 1.0 - a;
                    }
                    std::fill(Rc.begin(), Rc.end(), 0.0);
                    double Ra = 0.0;
                    for (std::size_t h = hits.size(); h-- > 0;) {
                        const Hit &hit = hits[h];
                        const auto &p = f.sorted[hit.slot];
                        std::size_t gi = p.index;
                        double dalpha = go[C] * hit.T * (1.0 - Ra);
                        for (std::size_t c = 0; c < C; ++c) {
                            dalpha += go[c] * hit.T * (p.payload[c] - Rc[c]);
                            if (gr[3]) (*gr[3])[gi * C + c] += go[c] * hit.alpha * hit.T;
                            Rc[c] = p.payload[c] * hit.alpha + (1.0 - hit.alpha) * Rc[c];
                        }
                        Ra = hit.alpha + (1.0 - hit.alpha) * Ra;
                        if (gr[2]) (*gr[2])[gi] += dalpha * hit.falloff;
                        double dpow = dalpha * hit.alpha;
                        g_mean2d[2 * gi] += dpow * (p.ka * hit.dx + p.kb * hit.dy);
                        g_mean2d[2 * gi + 1] += dpow * (p.kb * hit.dx + p.kc * hit.dy);
                        g_conic[3 * gi] += dpow * (-0.5 * hit.dx * hit.dx);
                        g_conic[3 * gi + 1] += dpow * (-hit.dx * hit.dy);
                        g_conic[3 * gi + 2] += dpow * (-0.5 * hit.dy * hit.dy);
                    }
                }
            if (!gr[0] && !gr[1]) return;
            for (std::size_t i = 0; i < n; ++i) {
                const auto &p = f.proj[i];
                if (p.radius <= 0.0) continue;
                double gka = g_conic[3 * i], gkb = g_conic[3 * i + 1], gkc = g_conic[3 * i + 2];
                double a = p.a, b = p.b, c = p.c, D = a * c - b * b, D2 = D * D;
                double ga = (-c * c * gka + b * c * gkb - b * b * gkc) / D2;
                double gb = (2 * b * c * gka - (a * c + b * b) * gkb + 2 * a * b * gkc) / D2;
                double gc = (-b * b * gka + a * b * gkb - a * a * gkc) / D2;
                const double(*J)[3] = p.J;
                // 2D covariance entries: a = J0 V J0^T, b = J0 V J1^T, c = J1 V J1^T
                Mat3 gV{};
                for (int k = 0; k < 3; ++k)
                    for (int l = 0; l < 3; ++l)
                        gV[k * 3 + l] = ga * J[0][k] * J[0][l] + gb * J[0][k] * J[1][l] + gc * J[1][k] * J[1][l];
                if (gr[1]) {
                    Mat3 gS = matmul3(matmul3(transpose3(cam.rotation), gV), cam.rotation);
                    for (int k = 0; k < 9; ++k) (*gr[1])[9 * i + k] += gS[k];
                }
                if (!gr[0]) continue;
                const Mat3 &V = p.V;
                double gJ0[3], gJ1[3];
                for (int k = 0; k < 3; ++k) {
                    double vj0 = 0, vtj0 = 0, vj1 = 0, vtj1 = 0, j0v = 0;
                    for (int l = 0; l < 3; ++l) {
                        vj0 += V[k * 3 + l] * J[0][l];
                        vtj0 += V[l * 3 + k] * J[0][l];
                        vj1 += V[k * 3 + l] * J[1][l];
                        vtj1 += V[l * 3 + k] * J[1][l];
                        j0v += J[0][l] * V[l * 3 + k];
                    }
                    gJ0[k] = ga * (vj0 + vtj0) + gb * vj1;
                    gJ1[k] = gc * (vj1 + vtj1) + gb * j0v;
                }
                double tx = p.t[0], ty = p.t[1], tz = p.t[2];
                double gmx = g_mean2d[2 * i], gmy = g_mean2d[2 * i + 1];
                Vec3 gt{gmx * cam.fx / tz + gJ0[2] * (-cam.fx / (tz * tz)),
                        gmy * cam.fy / tz + gJ1[2] * (-cam.fy / (tz * tz)),
                        -gmx * cam.fx * tx / (tz * tz) - gmy * cam.fy * ty / (tz * tz) +
                            gJ0[0] * (-cam.fx / (tz * tz)) + gJ0[2] * (2 * cam.fx * tx / (tz * tz * tz)) +
                            gJ1[1] * (-cam.fy / (tz * tz)) + gJ1[2] * (2 * cam.fy * ty / (tz * tz * tz))};
                Vec3 gx = mul3(transpose3(cam.rotation), gt);
                for (int k = 0; k < 3; ++k) (*gr[0])[3 * i + k] += gx[k];
            }
        });
}

/// Splits a rasterize output into color and alpha.
inline RenderedImage to_image(const Tensor &out, Channel semantics) {
    std::size_t H = out.dim(0), W = out.dim(1), C = out.dim(2) - 1;
    RenderedImage img = detail::blank(W, H, C);
    img.semantics = semantics;
    for (std::size_t p = 0; p < H * W; ++p) {
        for (std::size_t c = 0; c < C; ++c) img.color[p * C + c] = out[p * (C + 1) + c];
        img.alpha[p] = out[p * (C + 1) + C];
    }
    return img;
}

} // namespace ad_ops

} // namespace rnda::raster
