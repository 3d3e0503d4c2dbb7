// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/tensor.hpp>
#include <rnda/io/pfm.hpp>
#include <rnda/sh/sh_basis.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

namespace rnda::sh {

inline constexpr std::size_t kProbeRows = 32; // latitude, theta from +z
inline constexpr std::size_t kProbeCols = 64; // longitude, phi = atan2(y, x)
inline constexpr std::size_t kProbeTexels = kProbeRows * kProbeCols;

/// Direction and solid angle of one probe texel.
struct ProbeTexel {
    Vec3 direction;
    double solid_angle;
};

/// Latitude-longitude environment radiance, 32 x 64 x RGB, non-negative.
struct LightProbe {
    ad::Tensor radiance{ad::Shape{kProbeRows, kProbeCols, 3}};

    static LightProbe constant(double r, double g, double b) {
        LightProbe p;
        for (std::size_t i = 0; i < kProbeTexels; ++i) {
            p.radiance[3 * i] = r;
            p.radiance[3 * i + 1] = g;
            p.radiance[3 * i + 2] = b;
        }
        return p;
    }

    double max_radiance() const { return *std::max_element(radiance.storage().begin(), radiance.storage().end()); }
};

inline double texel_theta(std::size_t row) {
    return (static_cast<double>(row) + 0.5) * std::numbers::pi / kProbeRows;
}
inline double texel_phi(std::size_t col) {
    return -std::numbers::pi + (static_cast<double>(col) + 0.5) * 2.0 * std::numbers::pi / kProbeCols;
}

/// Texel centers as unit directions with exact per-texel solid angles
/// dphi * (cos theta_top - cos theta_bottom), which sum to 4 pi.
inline const std::vector<ProbeTexel> &probe_directions() {
    static const std::vector<ProbeTexel> table = [] {
        std::vector<ProbeTexel> t;
        t.reserve(kProbeTexels);
        const double dtheta = std::numbers::pi / kProbeRows;
        const double dphi = 2.0 * std::numbers::pi / kProbeCols;
        for (std::size_t i = 0; i < kProbeRows; ++i) {
            double th = texel_theta(i);
            double band = std::cos(i * dtheta) - std::cos((i + 1) * dtheta);
            for (std::size_t j = 0; j < kProbeCols; ++j) {
                double ph = texel_phi(j);
                t.push_back({{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)}, dphi * band});
            }
        }
        return t;
    }();
    return table;
}

/// SH basis at every texel direction, kProbeTexels x 16, row-major.
inline const std::vector<double> &probe_sh_table() {
    static const std::vector<double> table = [] {
        std::vector<double> t;
        t.reserve(kProbeTexels * kNumCoeffs);
        for (const ProbeTexel &tx : probe_directions()) {
            Basis b = basis_unchecked(tx.direction[0], tx.direction[1], tx.direction[2]);
            t.insert(t.end(), b.begin(), b.end());
        }
        return t;
    }();
    return table;
}

/// Row and column of the texel containing `dir`.
inline std::pair<std::size_t, std::size_t> probe_texel_of(const Vec3 &dir) {
    Vec3 d = normalize3(dir);
    double th = std::acos(std::clamp(d[2], -1.0, 1.0));
    double ph = std::atan2(d[1], d[0]);
    auto row = static_cast<std::size_t>(std::min<double>(kProbeRows - 1, std::floor(th / (std::numbers::pi / kProbeRows))));
    auto col = static_cast<long>(std::floor((ph + std::numbers::pi) / (2.0 * std::numbers::pi / kProbeCols)));
    col = ((col % static_cast<long>(kProbeCols)) + static_cast<long>(kProbeCols)) % static_cast<long>(kProbeCols);
    return {row, static_cast<std::size_t>(col)};
}

/// Nearest-texel radiance lookup.
inline Vec3 probe_sample(const LightProbe &probe, const Vec3 &dir) {
    auto [r, c] = probe_texel_of(dir);
    const double *p = probe.radiance.data() + 3 * (r * kProbeCols + c);
    return {p[0], p[1], p[2]};
}

/// Projects a scalar function on the sphere onto degree-3 SH by probe quadrature.
template <class F> Basis project_quadrature(F &&f) {
    Basis c{};
    const auto &dirs = probe_directions();
    const auto &tab = probe_sh_table();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        double v = f(dirs[i].direction) * dirs[i].solid_angle;
        for (std::size_t j = 0; j < kNumCoeffs; ++j) c[j] += v * tab[i * kNumCoeffs + j];
    }
    return c;
}

inline const char *kProbeSidecar = "mapping = latlong\n"
                                   "rows = 32\n"
                                   "cols = 64\n"
                                   "channels = rgb\n"
                                   "theta = acos(d_z), row 0 at +z\n"
                                   "phi = atan2(d_y, d_x), col 0 at -pi\n"
                                   "lookup = nearest\n";

inline std::filesystem::path probe_sidecar_path(const std::filesystem::path &pfm) {
    return std::filesystem::path(pfm.string() + ".txt");
}

/// Writes the probe as a 64 x 32 RGB PFM plus a text sidecar naming the mapping.
inline void save_probe(const std::filesystem::path &path, const LightProbe &probe) {
    io::FloatImage img{kProbeCols, kProbeRows, 3, {}};
    img.data.assign(probe.radiance.storage().begin(), probe.radiance.storage().end());
    io::write_pfm(path, img);
    std::ofstream side(probe_sidecar_path(path));
    side << kProbeSidecar;
    if (!side) throw IoError("cannot write probe sidecar for " + path.string());
}

inline LightProbe load_probe(const std::filesystem::path &path) {
    io::FloatImage img = io::read_pfm(path);
    if (img.width != kProbeCols || img.height != kProbeRows || img.channels != 3)
        throw IoError("probe must be a 64x32 RGB PFM: " + path.string());
    LightProbe p;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        if (!(img.data[i] >= 0.0f) || !std::isfinite(img.data[i]))
            throw IoError("probe radiance must be finite and non-negative: " + path.string());
        p.radiance[i] = img.data[i];
    }
    return p;
}

} // namespace rnda::sh
