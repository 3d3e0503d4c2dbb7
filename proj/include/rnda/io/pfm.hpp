// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rnda::io {

/// Float image in memory: rows top to bottom, channels interleaved.
struct FloatImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<float> data;

    float &at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

    friend bool operator==(const FloatImage &, const FloatImage &) = default;
};

/// Writes a little-endian PFM ("PF" for 3 channels, "Pf" for 1).
/// PFM stores scanlines bottom to top.
inline void write_pfm(const std::filesystem::path &path, const FloatImage &img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("pfm supports 1 or 3 channels: " + path.string());
    if (img.data.size() != img.width * img.height * img.channels) throw IoError("pfm: inconsistent image buffer");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0\n";
    std::size_t row = img.width * img.channels;
    std::vector<unsigned char> buf(row * 4);
    for (std::size_t y = img.height; y-- > 0;) {
        for (std::size_t i = 0; i < row; ++i) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(img.data[y * row + i]);
            for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
        }
        out.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline FloatImage read_pfm(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string magic;
    FloatImage img;
    double scale = 0.0;
    in >> magic >> img.width >> img.height >> scale;
    if (!in || (magic != "PF" && magic != "Pf") || img.width == 0 || img.height == 0 || scale == 0.0)
        throw IoError("corrupt pfm header: " + path.string());
    in.get(); // single whitespace after the scale
    img.channels = magic == "PF" ? 3 : 1;
    bool little = scale < 0.0;
    std::size_t row = img.width * img.channels;
    img.data.resize(row * img.height);
    std::vector<unsigned char> buf(row * 4);
    for (std::size_t y = img.height; y-- > 0;) {
        in.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated pfm: " + path.string());
        for (std::size_t i = 0; i < row; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                std::uint32_t byte = buf[4 * i + (little ? b : 3 - b)];
                bits |= byte << (8 * b);
            }
            img.data[y * row + i] = std::bit_cast<float>(bits);
        }
    }
    return img;
}

} // namespace rnda::io
