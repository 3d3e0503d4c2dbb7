// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/tensor.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

namespace rnda::io {

inline constexpr char kCheckpointMagic[8] = {'R', 'N', 'D', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container of named f64 tensors. Layout (little-endian):
/// magic[8] version:u32 count:u64, then per record
/// name_len:u32 name rank:u32 dims:u64[rank] data:f64[numel].
using TensorRecords = std::map<std::string, ad::Tensor>;

namespace detail {
template <class T> void put(std::vector<unsigned char> &buf, T v) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    buf.insert(buf.end(), bits.begin(), bits.end());
}

struct Reader {
    const std::vector<unsigned char> &buf;
    std::size_t pos = 0;
    std::string what;
    template <class T> T get() {
        if (pos + sizeof(T) > buf.size()) throw IoError("truncated checkpoint: " + what);
        std::array<unsigned char, sizeof(T)> bits;
        std::memcpy(bits.data(), buf.data() + pos, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
        pos += sizeof(T);
        return std::bit_cast<T>(bits);
    }
};
} // namespace detail

/// Writes to a temporary sibling and renames it into place.
inline void write_checkpoint(const std::filesystem::path &path, const TensorRecords &records) {
    std::vector<unsigned char> buf(kCheckpointMagic, kCheckpointMagic + 8);
    detail::put<std::uint32_t>(buf, kCheckpointVersion);
    detail::put<std::uint64_t>(buf, records.size());
    for (const auto &[name, t] : records) {
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) detail::put<std::uint64_t>(buf, d);
        for (double v : t.values()) detail::put<double>(buf, v);
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline TensorRecords read_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
        throw IoError("not a checkpoint (bad magic): " + path.string());
    detail::Reader r{buf, 8, path.string()};
    auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
    auto count = r.get<std::uint64_t>();
    TensorRecords out;
    for (std::uint64_t k = 0; k < count; ++k) {
        auto len = r.get<std::uint32_t>();
        if (r.pos + len > buf.size()) throw IoError("truncated checkpoint: " + path.string());
        std::string name(reinterpret_cast<const char *>(buf.data() + r.pos), len);
        r.pos += len;
        auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw IoError("corrupt checkpoint record " + name);
        ad::Shape shape(rank);
        for (auto &d : shape) d = r.get<std::uint64_t>();
        std::size_t n = ad::numel(shape);
        if (n > (buf.size() - r.pos) / 8) throw IoError("truncated checkpoint record " + name);
        std::vector<double> data(n);
        for (double &v : data) v = r.get<double>();
        out.emplace(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos != buf.size()) throw IoError("trailing bytes in checkpoint: " + path.string());
    return out;
}

} // namespace rnda::io
