// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/tensor.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace rnda::eval {

/// Writes an H x W x 3 (or H x W) image in [0, 1] as an 8-bit PNG. Values
/// are clamped; `gamma` > 0 applies v^(1/gamma) first.
inline void write_png(const std::filesystem::path &path, const ad::Tensor &img, double gamma = 0.0) {
    if (img.rank() != 2 && !(img.rank() == 3 && (img.dim(2) == 3 || img.dim(2) == 1)))
        throw Error("write_png: expected H x W or H x W x 3");
    std::size_t H = img.dim(0), W = img.dim(1), C = img.rank() == 3 ? img.dim(2) : 1;
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    std::vector<png_byte> row(W * C);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t i = 0; i < W * C; ++i) {
            double v = std::clamp(img[y * W * C + i], 0.0, 1.0);
            if (gamma > 0) v = std::pow(v, 1.0 / gamma);
            row[i] = static_cast<png_byte>(std::lround(v * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit RGB or grayscale PNG into [0, 1] (H x W x C).
inline ad::Tensor read_png(const std::filesystem::path &path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw IoError("cannot read png " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode png " + path.string() + ": " + image.message);
    }
    ad::Tensor out({image.height, image.width, 3});
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i] / 255.0;
    return out;
}

} // namespace rnda::eval
