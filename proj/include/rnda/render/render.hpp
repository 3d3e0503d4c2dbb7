// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/pbr/shade.hpp>
#include <rnda/raster/rasterize.hpp>
#include <rnda/sh/sh_basis.hpp>

#include <span>
#include <string>
#include <vector>

namespace rnda::render {

/// World-space Gaussians ready for rendering. Appearance members may be
/// left invalid when the mode that needs them is not used.
struct PosedGaussians {
    ad::Var position;   ///< N x 3
    ad::Var covariance; ///< N x 3 x 3
    ad::Var opacity;    ///< N x 1
    ad::Var normal;     ///< N x 3, unit
    ad::Var color;      ///< N x 3 x 16 SH coefficients
    ad::Var albedo;     ///< N x 3
    ad::Var roughness;  ///< N x 1
    ad::Var visibility; ///< N x 16
};

enum class ShadingMode { sh_color, pbr, normal, albedo };

inline const char *to_string(ShadingMode m) {
    switch (m) {
    case ShadingMode::sh_color: return "sh_color";
    case ShadingMode::pbr: return "pbr";
    case ShadingMode::normal: return "normal";
    case ShadingMode::albedo: return "albedo";
    }
    return "?";
}

inline ShadingMode parse_mode(const std::string &s) {
    if (s == "sh_color") return ShadingMode::sh_color;
    if (s == "pbr") return ShadingMode::pbr;
    if (s == "normal") return ShadingMode::normal;
    if (s == "albedo") return ShadingMode::albedo;
    throw Error("unknown shading mode '" + s + "' (expected sh_color, pbr, normal or albedo)");
}

namespace detail {
inline ad::Var require(const ad::Var &v, const char *what, ShadingMode m) {
    if (!v.valid()) throw Error(std::string(to_string(m)) + " rendering needs " + what);
    return v;
}
} // namespace detail

/// Per-Gaussian RGB payload for `mode`.
inline ad::Var payload(const PosedGaussians &g, ShadingMode mode, const raster::Camera &cam, const ad::Var *probe,
                       bool specular = true) {
    switch (mode) {
    case ShadingMode::normal:
        return ad::add_scalar(ad::scale(detail::require(g.normal, "normals", mode), 0.5), 0.5);
    case ShadingMode::albedo: return detail::require(g.albedo, "albedo", mode);
    case ShadingMode::sh_color: {
        ad::Var coeffs = detail::require(g.color, "SH color", mode);
        Vec3 c = cam.center();
        ad::Tensor eye({1, 3});
        for (int k = 0; k < 3; ++k) eye[k] = c[k];
        std::vector<std::size_t> rows(g.position.dim(0), 0);
        ad::Var eyes = ad::gather_rows(g.position.tape().constant(eye), rows);
        ad::Var dirs = ad::normalize(ad::sub(g.position, eyes), {0, 0, 1});
        return sh::ad_ops::sh_eval(coeffs, dirs);
    }
    case ShadingMode::pbr:
        if (!probe || !probe->valid()) throw Error("pbr rendering needs a light probe");
        return pbr::ad_ops::shade(detail::require(g.albedo, "albedo", mode),
                                  detail::require(g.roughness, "roughness", mode), g.normal, g.position,
                                  detail::require(g.visibility, "visibility", mode), *probe, cam.center(), specular);
    }
    throw Error("unknown shading mode");
}

/// Renders `mode` from `cam`. Output is H x W x 4: RGB then alpha.
inline ad::Var render_channels(const PosedGaussians &g, ShadingMode mode, const raster::Camera &cam,
                               const ad::Var *probe = nullptr, bool specular = true) {
    return raster::ad_ops::rasterize(g.position, g.covariance, g.opacity, payload(g, mode, cam, probe, specular), cam);
}

/// Several modes composited in one rasterization pass. Returns one
/// H x W x 3 image per mode followed by the H x W x 1 alpha.
inline std::vector<ad::Var> render_modes(const PosedGaussians &g, std::span<const ShadingMode> modes,
                                         const raster::Camera &cam, const ad::Var *probe = nullptr,
                                         bool specular = true) {
    if (modes.empty()) throw Error("render_modes: no modes requested");
    std::vector<ad::Var> payloads;
    for (ShadingMode m : modes) payloads.push_back(payload(g, m, cam, probe, specular));
    ad::Var out = raster::ad_ops::rasterize(g.position, g.covariance, g.opacity, ad::concat(payloads, 1), cam);
    std::vector<ad::Var> images;
    for (std::size_t k = 0; k < modes.size(); ++k) images.push_back(ad::slice(out, 2, 3 * k, 3 * k + 3));
    images.push_back(ad::slice(out, 2, 3 * modes.size(), 3 * modes.size() + 1));
    return images;
}

/// RGB part (H x W x 3) of a render.
inline ad::Var rgb(ad::Var rendered) { return ad::slice(rendered, 2, 0, rendered.dim(2) - 1); }

/// Alpha part (H x W x 1) of a render.
inline ad::Var alpha(ad::Var rendered) { return ad::slice(rendered, 2, rendered.dim(2) - 1, rendered.dim(2)); }

inline raster::Channel semantics_of(ShadingMode m) {
    switch (m) {
    case ShadingMode::normal: return raster::Channel::normal;
    case ShadingMode::albedo: return raster::Channel::albedo;
    default: return raster::Channel::rgb;
    }
}

} // namespace rnda::render
