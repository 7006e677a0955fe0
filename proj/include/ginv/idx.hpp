#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ginv/common.hpp"

namespace ginv {

inline constexpr uint32_t kIdxMagicLabels = 0x00000801u;
inline constexpr uint32_t kIdxMagicImages = 0x00000803u;

namespace detail {

inline std::vector<uint8_t> read_raw_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw io_error("cannot open file: " + path);
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    size_t got = size > 0 ? std::fread(buf.data(), 1, buf.size(), f) : 0;
    std::fclose(f);
    if (got != buf.size()) throw io_error("short read: " + path);
    return buf;
}

inline std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in, const std::string& path) {
    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    // 15+16: zlib header detection off, gzip wrapper on
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw io_error("zlib init failed: " + path);
    std::vector<uint8_t> out;
    out.reserve(in.size() * 4);
    std::vector<uint8_t> chunk(1 << 16);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw io_error("gzip decompression failed: " + path);
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

inline uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void write_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

}  // namespace detail

struct IdxData {
    uint32_t magic = 0;
    std::vector<uint32_t> dims;
    std::vector<uint8_t> payload;  // unsigned bytes, row-major
};

// Reads an IDX file (gzip-compressed variants detected by magic bytes).
inline IdxData read_idx(const std::string& path) {
    std::vector<uint8_t> bytes = detail::read_raw_file(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        bytes = detail::gunzip(bytes, path);
    if (bytes.size() < 4) throw io_error("truncated IDX header: " + path);

    IdxData idx;
    idx.magic = detail::read_be32(bytes.data());
    if (idx.magic != kIdxMagicLabels && idx.magic != kIdxMagicImages)
        throw io_error("bad IDX magic number in " + path);
    const size_t ndim = idx.magic & 0xff;  // low byte encodes dimension count
    if (bytes.size() < 4 + 4 * ndim) throw io_error("truncated IDX header: " + path);

    size_t total = 1;
    for (size_t i = 0; i < ndim; ++i) {
        uint32_t d = detail::read_be32(bytes.data() + 4 + 4 * i);
        idx.dims.push_back(d);
        total *= d;
    }
    if (bytes.size() != 4 + 4 * ndim + total)
        throw io_error("IDX payload size mismatch in " + path);
    idx.payload.assign(bytes.begin() + 4 + 4 * ndim, bytes.end());
    return idx;
}

inline void write_idx(const std::string& path, uint32_t magic,
                      const std::vector<uint32_t>& dims,
                      const std::vector<uint8_t>& payload) {
    size_t total = 1;
    for (uint32_t d : dims) total *= d;
    GINV_CHECK(total == payload.size(), "write_idx: dims do not match payload size");
    GINV_CHECK((magic & 0xff) == dims.size(), "write_idx: magic dimension count mismatch");

    std::vector<uint8_t> out;
    out.reserve(4 + 4 * dims.size() + payload.size());
    detail::write_be32(out, magic);
    for (uint32_t d : dims) detail::write_be32(out, d);
    out.insert(out.end(), payload.begin(), payload.end());

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw io_error("cannot open file for writing: " + path);
    size_t put = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (put != out.size()) throw io_error("short write: " + path);
}

}  // namespace ginv
