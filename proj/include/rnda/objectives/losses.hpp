// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/ops.hpp>
#include <rnda/core/rng.hpp>
#include <rnda/raster/camera.hpp>
#include <rnda/raster/rasterize.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace rnda::objectives {

inline constexpr double kSmoothL1Beta = 1e-6;

/// Loss weights. All must be non-negative.
struct LossWeights {
    double lpips = 0.1;
    double normal = 0.05;
    double gc = 1e-4;

    void validate() const {
        if (!(lpips >= 0) || !(normal >= 0) || !(gc >= 0)) throw Error("loss weights must be non-negative");
    }
};

/// 1 where the ground-truth alpha is positive, else 0 (H x W).
inline ad::Tensor foreground_mask(const ad::Tensor &gt_alpha) {
    ad::Tensor m(gt_alpha.shape());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = gt_alpha[i] > 0.0 ? 1.0 : 0.0;
    return m;
}

/// Mean smooth-|a - b| over foreground pixels and channels. `a`, `b` are
/// H x W x C; `mask` is H x W. An empty mask gives 0.
inline ad::Var l1_image(ad::Var a, ad::Var b, const ad::Tensor &mask) {
    const ad::Shape &s = a.shape();
    if (s != b.shape() || s.size() != 3) a.tape().shape_error("l1_image", ad::to_string(s) + " vs " + ad::to_string(b.shape()));
    if (mask.shape() != ad::Shape{s[0], s[1]})
        a.tape().shape_error("l1_image", "mask " + ad::to_string(mask.shape()) + " for image " + ad::to_string(s));
    std::size_t C = s[2];
    double count = std::accumulate(mask.storage().begin(), mask.storage().end(), 0.0) * static_cast<double>(C);
    ad::Tensor w(s);
    for (std::size_t p = 0; p < mask.size(); ++p)
        for (std::size_t c = 0; c < C; ++c) w[p * C + c] = count > 0 ? mask[p] / count : 0.0;
    return ad::sum(ad::mul(ad::smooth_abs(ad::sub(a, b), kSmoothL1Beta), a.tape().constant(w)));
}

/// Masked L1 between normal-encoded images.
inline ad::Var normal_loss(ad::Var gt_normal, ad::Var normal, const ad::Tensor &mask) {
    return l1_image(gt_normal, normal, mask);
}

/// Fixed, seeded convolutional feature stack standing in for a pretrained
/// network: three 3x3 stride-2 layers (16, 32, 64 channels) with tanh.
class FeatureExtractor {
  public:
    static constexpr std::size_t kKernel = 3;
    static constexpr std::array<std::size_t, 3> kChannels{16, 32, 64};

    explicit FeatureExtractor(std::uint64_t seed = 0x5eed) {
        Rng rng(seed);
        std::size_t in = 3;
        for (std::size_t out : kChannels) {
            std::size_t fan_in = kKernel * kKernel * in;
            ad::Tensor w({fan_in, out}), b({out});
            double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (double &v : w.values()) v = rng.normal(0.0, sd);
            for (double &v : b.values()) v = rng.normal(0.0, 0.1);
            weights_.push_back(std::move(w));
            biases_.push_back(std::move(b));
            in = out;
        }
    }

    std::size_t layers() const { return weights_.size(); }

    /// Unit-normalized per-location features of an H x W x 3 image, one
    /// tensor per layer (H_l x W_l x C_l).
    std::vector<ad::Var> features(ad::Var image) const {
        if (image.shape().size() != 3 || image.dim(2) != 3)
            image.tape().shape_error("features", "expects H x W x 3, got " + ad::to_string(image.shape()));
        std::vector<ad::Var> out;
        ad::Var h = image;
        ad::Tape &t = image.tape();
        for (std::size_t l = 0; l < layers(); ++l) {
            h = ad::tanh(ad::conv2d(h, t.constant(weights_[l]), t.constant(biases_[l]), kKernel, 2, 1));
            out.push_back(ad::normalize(h));
        }
        return out;
    }

  private:
    std::vector<ad::Tensor> weights_, biases_;
};

/// Sum over layers of the mean squared distance between unit features.
inline ad::Var perceptual(const FeatureExtractor &phi, ad::Var a, ad::Var b) {
    if (a.shape() != b.shape()) a.tape().shape_error("perceptual", ad::to_string(a.shape()) + " vs " + ad::to_string(b.shape()));
    auto fa = phi.features(a), fb = phi.features(b);
    ad::Var total;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        double locations = static_cast<double>(fa[l].dim(0) * fa[l].dim(1));
        ad::Var term = ad::scale(ad::sum(ad::square(ad::sub(fa[l], fb[l]))), 1.0 / locations);
        total = total.valid() ? ad::add(total, term) : term;
    }
    return total;
}

/// Reconstruction loss: L1 plus weighted perceptual term.
inline ad::Var reconstruction_loss(const FeatureExtractor &phi, ad::Var gt, ad::Var pred, const ad::Tensor &mask,
                                   double lpips_weight) {
    ad::Var l = l1_image(gt, pred, mask);
    if (lpips_weight > 0) l = ad::add(l, ad::scale(perceptual(phi, gt, pred), lpips_weight));
    return l;
}

inline ad::Var stage1_loss(const FeatureExtractor &phi, ad::Var gt_rgb, ad::Var rgb, ad::Var gt_normal, ad::Var normal,
                           const ad::Tensor &mask, const LossWeights &w) {
    w.validate();
    return ad::add(reconstruction_loss(phi, gt_rgb, rgb, mask, w.lpips),
                   ad::scale(normal_loss(gt_normal, normal, mask), w.normal));
}

/// Stage-two objective. `gc` may be invalid when the consistency term is off.
inline ad::Var stage2_loss(const FeatureExtractor &phi, ad::Var gt_rgb, ad::Var pbr_rgb, ad::Var gt_normal,
                           ad::Var normal, ad::Var gc, const ad::Tensor &mask, const LossWeights &w) {
    ad::Var l = stage1_loss(phi, gt_rgb, pbr_rgb, gt_normal, normal, mask, w);
    if (gc.valid() && w.gc > 0) l = ad::add(l, ad::scale(gc, w.gc));
    return l;
}

// ---------------------------------------------------------------------------
// Co-visibility

inline constexpr double kGrazingMarginDegrees = 9.0;

/// Gaussian i is visible from a camera at `center` when the angle between
/// its normal and (center - x_i) is at most 90 degrees minus the margin.
inline std::vector<bool> visible_from(const ad::Tensor &positions, const ad::Tensor &normals, const Vec3 &center,
                                      double margin_deg = kGrazingMarginDegrees) {
    std::size_t n = positions.dim(0);
    double cos_limit = std::cos((90.0 - margin_deg) * std::numbers::pi / 180.0);
    std::vector<bool> vis(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 x{positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
        Vec3 nn{normals[3 * i], normals[3 * i + 1], normals[3 * i + 2]};
        Vec3 d = sub3(center, x);
        double len = norm3(d) * norm3(nn);
        vis[i] = len > 0 && dot3(nn, d) >= cos_limit * len;
    }
    return vis;
}

struct CoVisibility {
    std::vector<bool> gaussians; ///< visible from camera b
    ad::Tensor mask;             ///< H x W in camera a, 1 where co-visible
};

/// Per-Gaussian visibility from `cam_b`, rasterized as an indicator in
/// `cam_a` and thresholded at 0.5.
inline CoVisibility covisibility_mask(const ad::Tensor &positions, const ad::Tensor &covariance,
                                      const ad::Tensor &opacity, const ad::Tensor &normals, const raster::Camera &cam_a,
                                      const raster::Camera &cam_b, double margin_deg = kGrazingMarginDegrees) {
    CoVisibility out{visible_from(positions, normals, cam_b.center(), margin_deg), {}};
    std::size_t n = positions.dim(0);
    std::vector<raster::Splat2D> splats;
    for (std::size_t i = 0; i < n; ++i) {
        Mat3 c;
        std::copy_n(covariance.data() + 9 * i, 9, c.begin());
        auto s = raster::project({positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}, c, opacity[i],
                                 {out.gaussians[i] ? 1.0 : 0.0}, i, cam_a);
        if (s) splats.push_back(std::move(*s));
    }
    raster::RenderedImage img = raster::rasterize(splats, cam_a);
    out.mask = ad::Tensor({cam_a.height, cam_a.width});
    for (std::size_t p = 0; p < out.mask.size(); ++p)
        out.mask[p] = !splats.empty() && img.color[p] > 0.5 ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Feature sampling and contrastive consistency

/// A pixel in image a and its counterpart in image b (full-resolution coordinates).
struct Correspondence {
    double ax, ay, bx, by;
};

/// Identity correspondences at the centers of all masked pixels.
inline std::vector<Correspondence> mask_correspondences(const ad::Tensor &mask) {
    std::vector<Correspondence> c;
    std::size_t H = mask.dim(0), W = mask.dim(1);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            if (mask[y * W + x] > 0.5) c.push_back({double(x), double(y), double(x), double(y)});
    return c;
}

/// Correspondences from co-visible Gaussians: each centre projected into
/// both cameras, kept when it lands on the co-visibility mask in a and
/// inside image b.
inline std::vector<Correspondence> gaussian_correspondences(const ad::Tensor &positions, const CoVisibility &cv,
                                                            const raster::Camera &cam_a, const raster::Camera &cam_b) {
    std::vector<Correspondence> out;
    for (std::size_t i = 0; i < positions.dim(0); ++i) {
        if (!cv.gaussians[i]) continue;
        Vec3 x{positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
        Vec3 pa = cam_a.to_camera(x), pb = cam_b.to_camera(x);
        if (pa[2] <= raster::kNearPlane || pb[2] <= raster::kNearPlane) continue;
        double ax = cam_a.fx * pa[0] / pa[2] + cam_a.cx, ay = cam_a.fy * pa[1] / pa[2] + cam_a.cy;
        double bx = cam_b.fx * pb[0] / pb[2] + cam_b.cx, by = cam_b.fy * pb[1] / pb[2] + cam_b.cy;
        auto inside = [](double x, double y, const raster::Camera &c) {
            return x >= -0.5 && y >= -0.5 && x < c.width - 0.5 && y < c.height - 0.5;
        };
        if (!inside(ax, ay, cam_a) || !inside(bx, by, cam_b)) continue;
        auto px = static_cast<std::size_t>(std::lround(ax)), py = static_cast<std::size_t>(std::lround(ay));
        if (cv.mask[py * cam_a.width + px] > 0.5) out.push_back({ax, ay, bx, by});
    }
    return out;
}

/// Sampled features: per layer, N rows from each image.
struct FeaturePairs {
    std::vector<ad::Var> y, y_prime;
    bool with_replacement = false; ///< fewer than N candidates were available
};

namespace detail {
// Nearest feature cell of a full-resolution pixel coordinate.
inline std::size_t cell(double coord, std::size_t full, std::size_t layer) {
    double scaled = (coord + 0.5) * static_cast<double>(layer) / static_cast<double>(full);
    return std::min(layer - 1, static_cast<std::size_t>(std::max(0.0, std::floor(scaled))));
}
} // namespace detail

/// Draws N correspondences (without replacement when possible) and gathers
/// the matching feature rows from every layer. Image sizes are those the
/// features were computed from.
inline FeaturePairs sample_feature_pairs(const std::vector<ad::Var> &fa, const std::vector<ad::Var> &fb,
                                         const std::vector<Correspondence> &candidates, std::size_t size_a_w,
                                         std::size_t size_a_h, std::size_t size_b_w, std::size_t size_b_h,
                                         std::size_t n, Rng &rng) {
    if (candidates.empty()) throw Error("sample_feature_pairs: no co-visible locations");
    if (fa.size() != fb.size()) throw Error("sample_feature_pairs: layer count mismatch");
    FeaturePairs out;
    std::vector<std::size_t> pick;
    if (candidates.size() >= n) {
        std::vector<std::size_t> idx(candidates.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(idx.size() - i));
            std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
            pick.push_back(idx[i]);
        }
    } else {
        out.with_replacement = true;
        for (std::size_t i = 0; i < n; ++i)
            pick.push_back(std::min(candidates.size() - 1,
                                    static_cast<std::size_t>(rng.uniform() * static_cast<double>(candidates.size()))));
    }
    for (std::size_t l = 0; l < fa.size(); ++l) {
        std::size_t ha = fa[l].dim(0), wa = fa[l].dim(1), hb = fb[l].dim(0), wb = fb[l].dim(1), c = fa[l].dim(2);
        std::vector<std::size_t> ra, rb;
        for (std::size_t k : pick) {
            const Correspondence &p = candidates[k];
            ra.push_back(detail::cell(p.ay, size_a_h, ha) * wa + detail::cell(p.ax, size_a_w, wa));
            rb.push_back(detail::cell(p.by, size_b_h, hb) * wb + detail::cell(p.bx, size_b_w, wb));
        }
        out.y.push_back(ad::gather_rows(ad::reshape(fa[l], {ha * wa, c}), ra));
        out.y_prime.push_back(ad::gather_rows(ad::reshape(fb[l], {hb * wb, fb[l].dim(2)}), rb));
    }
    return out;
}

/// Same-location sampling inside a mask (images of equal size).
inline FeaturePairs sample_feature_pairs(const std::vector<ad::Var> &fa, const std::vector<ad::Var> &fb,
                                         const ad::Tensor &mask, std::size_t n, Rng &rng) {
    std::size_t H = mask.dim(0), W = mask.dim(1);
    return sample_feature_pairs(fa, fb, mask_correspondences(mask), W, H, W, H, n, rng);
}

/// InfoNCE over one layer: sum_j -log softmax_k(y_j . y'_k)[j]. Rows of
/// Y and Y' are expected to be unit vectors.
inline ad::Var infonce(ad::Var y, ad::Var y_prime) {
    const ad::Shape &s = y.shape();
    if (s.size() != 2 || s != y_prime.shape() || s[0] < 2)
        y.tape().shape_error("infonce", "Y " + ad::to_string(s) + " Y' " + ad::to_string(y_prime.shape()));
    std::size_t n = s[0];
    ad::Var logits = ad::matmul(y, ad::transpose(y_prime));
    ad::Tensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    return ad::neg(ad::sum(ad::mul(ad::log(ad::softmax(logits)), y.tape().constant(eye))));
}

/// Geometric-consistency loss summed over layers.
inline ad::Var infonce_gc(const FeaturePairs &pairs) {
    ad::Var total;
    for (std::size_t l = 0; l < pairs.y.size(); ++l) {
        ad::Var t = infonce(pairs.y[l], pairs.y_prime[l]);
        total = total.valid() ? ad::add(total, t) : t;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Virtual viewpoints

struct ViewJitter {
    double azimuth_deg = 30.0;
    double elevation_deg = 10.0;
};

/// Camera orbited about its look-at target by the given angles (degrees),
/// keeping radius, intrinsics and target. World up is +z.
inline raster::Camera orbit_camera(const raster::Camera &cam, double d_azimuth_deg, double d_elevation_deg) {
    if (d_azimuth_deg == 0.0 && d_elevation_deg == 0.0) return cam;
    Vec3 rel = sub3(cam.center(), cam.target);
    double r = norm3(rel);
    double az = std::atan2(rel[1], rel[0]) + d_azimuth_deg * std::numbers::pi / 180.0;
    double el = std::asin(std::clamp(rel[2] / r, -1.0, 1.0)) + d_elevation_deg * std::numbers::pi / 180.0;
    el = std::clamp(el, -1.5, 1.5);
    Vec3 eye = add3(cam.target, {r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)});
    raster::Camera out = raster::Camera::look_at(eye, cam.target, {0, 0, 1}, cam.fx, cam.fy, cam.width, cam.height);
    out.cx = cam.cx;
    out.cy = cam.cy;
    return out;
}

/// Random virtual viewpoint: azimuth and elevation drawn uniformly within the jitter.
inline raster::Camera virtual_camera(const raster::Camera &cam, Rng &rng, const ViewJitter &j = {}) {
    double da = rng.uniform(-j.azimuth_deg, j.azimuth_deg);
    double de = rng.uniform(-j.elevation_deg, j.elevation_deg);
    return orbit_camera(cam, da, de);
}

} // namespace rnda::objectives
