// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/tensor.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace rnda::eval {

struct Psnr {
    double db = 0.0;
    bool infinite = false; ///< images identical (zero error)
};

namespace detail {
inline void same_image_shape(const ad::Tensor &a, const ad::Tensor &b, const char *what) {
    if (a.shape() != b.shape()) throw Error(std::string(what) + ": image shapes differ");
    if (a.rank() != 3 && a.rank() != 2) throw Error(std::string(what) + ": expected H x W or H x W x C images");
}
inline std::size_t channels_of(const ad::Tensor &t) { return t.rank() == 3 ? t.dim(2) : 1; }
} // namespace detail

inline Psnr psnr_from_mse(double mse, double peak) {
    if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(peak * peak / mse), false};
}

/// 10 log10(peak^2 / MSE) over all pixels and channels.
inline Psnr psnr(const ad::Tensor &a, const ad::Tensor &b, double peak = 1.0) {
    detail::same_image_shape(a, b, "psnr");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return psnr_from_mse(s / static_cast<double>(a.size()), peak);
}

/// PSNR over the pixels where `mask` (H x W) is nonzero. An empty mask
/// counts as identical.
inline Psnr psnr_masked(const ad::Tensor &a, const ad::Tensor &b, const ad::Tensor &mask, double peak = 1.0) {
    detail::same_image_shape(a, b, "psnr");
    std::size_t C = detail::channels_of(a);
    if (mask.size() * C != a.size()) throw Error("psnr: mask does not match the image");
    double s = 0.0, n = 0.0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (mask[p] == 0.0) continue;
        for (std::size_t c = 0; c < C; ++c) s += (a[p * C + c] - b[p * C + c]) * (a[p * C + c] - b[p * C + c]);
        n += static_cast<double>(C);
    }
    return psnr_from_mse(n > 0 ? s / n : 0.0, peak);
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0; ///< dynamic range L
};

/// Local SSIM values at every position where the window fits entirely
/// (H - w + 1) x (W - w + 1), averaged over channels.
inline ad::Tensor ssim_map(const ad::Tensor &a, const ad::Tensor &b, const SsimOptions &o = {}) {
    detail::same_image_shape(a, b, "ssim");
    std::size_t H = a.dim(0), W = a.dim(1), C = detail::channels_of(a), w = o.window;
    if (H < w || W < w)
        throw Error("ssim: image " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than the " +
                    std::to_string(w) + "x" + std::to_string(w) + " window");
    std::vector<double> g(w);
    double gs = 0;
    for (std::size_t i = 0; i < w; ++i) {
        double x = static_cast<double>(i) - static_cast<double>(w - 1) / 2.0;
        gs += g[i] = std::exp(-x * x / (2 * o.sigma * o.sigma));
    }
    for (double &v : g) v /= gs;
    double c1 = (o.k1 * o.range) * (o.k1 * o.range), c2 = (o.k2 * o.range) * (o.k2 * o.range);
    std::size_t oh = H - w + 1, ow = W - w + 1;
    ad::Tensor out({oh, ow});
    // Separable filtering of the five moment images, one channel at a time.
    std::vector<std::array<double, 5>> rows(H * ow);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::array<double, 5> acc{};
                for (std::size_t k = 0; k < w; ++k) {
                    double u = a[(y * W + x + k) * C + c], v = b[(y * W + x + k) * C + c];
                    acc[0] += g[k] * u;
                    acc[1] += g[k] * v;
                    acc[2] += g[k] * u * u;
                    acc[3] += g[k] * v * v;
                    acc[4] += g[k] * u * v;
                }
                rows[y * ow + x] = acc;
            }
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::array<double, 5> m{};
                for (std::size_t k = 0; k < w; ++k)
                    for (int j = 0; j < 5; ++j) m[j] += g[k] * rows[(y + k) * ow + x][j];
                double va = m[2] - m[0] * m[0], vb = m[3] - m[1] * m[1], cov = m[4] - m[0] * m[1];
                double s = ((2 * m[0] * m[1] + c1) * (2 * cov + c2)) /
                           ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
                out[y * ow + x] += s / static_cast<double>(C);
            }
    }
    return out;
}

/// Mean local SSIM.
inline double ssim(const ad::Tensor &a, const ad::Tensor &b, const SsimOptions &o = {}) {
    ad::Tensor m = ssim_map(a, b, o);
    double s = 0;
    for (double v : m.storage()) s += v;
    return s / static_cast<double>(m.size());
}

/// Mean local SSIM over windows whose center pixel lies in `mask` (H x W).
/// Returns 1 when no window qualifies.
inline double ssim_masked(const ad::Tensor &a, const ad::Tensor &b, const ad::Tensor &mask, const SsimOptions &o = {}) {
    ad::Tensor m = ssim_map(a, b, o);
    std::size_t W = a.dim(1), ow = m.dim(1), r = o.window / 2;
    if (mask.size() != a.dim(0) * W) throw Error("ssim: mask does not match the image");
    double s = 0, n = 0;
    for (std::size_t y = 0; y < m.dim(0); ++y)
        for (std::size_t x = 0; x < ow; ++x)
            if (mask[(y + r) * W + x + r] != 0.0) {
                s += m[y * ow + x];
                n += 1;
            }
    return n > 0 ? s / n : 1.0;
}

/// 1 where either alpha (H x W) is positive.
inline ad::Tensor union_mask(const ad::Tensor &alpha_a, const ad::Tensor &alpha_b) {
    if (alpha_a.shape() != alpha_b.shape() || alpha_a.rank() != 2) throw Error("union_mask: expected two H x W alphas");
    ad::Tensor m(alpha_a.shape());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = alpha_a[i] > 0 || alpha_b[i] > 0 ? 1.0 : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Reports

/// Per-frame metric values for one task, written one per line as
/// `task.metric.frame = value`, followed by `task.metric.mean = value`.
class MetricReport {
  public:
    explicit MetricReport(std::string task) : task_(std::move(task)) {
        if (task_ != "novel_view" && task_ != "novel_pose" && task_ != "relight" && task_ != "train")
            throw Error("unknown report task '" + task_ + "'");
    }

    const std::string &task() const { return task_; }

    void add(const std::string &metric, const std::string &frame, double value) {
        values_[metric].emplace_back(frame, value);
    }

    void add_psnr(const std::string &metric, const std::string &frame, const Psnr &p) {
        add(metric, frame, p.infinite ? std::numeric_limits<double>::infinity() : p.db);
    }

    /// Mean over frames; infinite when every frame is.
    double mean(const std::string &metric) const {
        auto it = values_.find(metric);
        if (it == values_.end() || it->second.empty()) throw Error("no values for metric " + metric);
        double s = 0;
        for (const auto &[f, v] : it->second) s += v;
        return s / static_cast<double>(it->second.size());
    }

    /// Mean with infinite frames left out; nullopt when all are infinite.
    std::optional<double> finite_mean(const std::string &metric) const {
        auto it = values_.find(metric);
        if (it == values_.end()) return std::nullopt;
        double s = 0, n = 0;
        for (const auto &[f, v] : it->second)
            if (std::isfinite(v)) {
                s += v;
                n += 1;
            }
        if (n == 0) return std::nullopt;
        return s / n;
    }

    std::vector<std::string> metrics() const {
        std::vector<std::string> m;
        for (const auto &[k, v] : values_) m.push_back(k);
        return m;
    }

    const std::vector<std::pair<std::string, double>> &values(const std::string &metric) const {
        return values_.at(metric);
    }

    std::string to_text() const {
        std::ostringstream os;
        os.precision(10);
        auto put = [&](double v) {
            if (std::isinf(v)) os << "inf";
            else os << v;
        };
        for (const auto &[metric, rows] : values_) {
            for (const auto &[frame, v] : rows) {
                os << task_ << '.' << metric << '.' << frame << " = ";
                put(v);
                os << '\n';
            }
            if (!rows.empty()) {
                os << task_ << '.' << metric << ".mean = ";
                put(mean(metric));
                os << '\n';
            }
        }
        return os.str();
    }

  private:
    std::string task_;
    std::map<std::string, std::vector<std::pair<std::string, double>>> values_;
};

} // namespace rnda::eval
