#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ginv/common.hpp"

namespace ginv {

// Minimal PNG writer (8-bit grayscale or RGB), enough for sample sheets and
// overlap grids; deflate via zlib.

namespace detail {

inline void png_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
    png_be32(out, static_cast<uint32_t>(data.size()));
    const size_t at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(out.data() + at), static_cast<uInt>(4 + data.size())));
    png_be32(out, crc);
}

}  // namespace detail

// pixels: row-major, `channels` bytes per pixel (1 = gray, 3 = RGB).
inline void write_png(const std::string& path, int64_t width, int64_t height, int channels,
                      const std::vector<uint8_t>& pixels) {
    GINV_CHECK(channels == 1 || channels == 3, "png: channels must be 1 or 3");
    GINV_CHECK(static_cast<int64_t>(pixels.size()) == width * height * channels,
               "png: pixel buffer size mismatch");

    // raw scanlines, each prefixed with filter type 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height * (width * channels + 1)));
    for (int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = pixels.data() + y * width * channels;
        raw.insert(raw.end(), row, row + width * channels);
    }
    uLongf clen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(clen);
    if (compress2(compressed.data(), &clen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw io_error("png: deflate failed for " + path);
    compressed.resize(clen);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    detail::png_be32(ihdr, static_cast<uint32_t>(width));
    detail::png_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);                                // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);            // gray / truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", compressed);
    detail::png_chunk(out, "IEND", {});

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw io_error("cannot open image for writing: " + path);
    const bool ok = std::fwrite(out.data(), 1, out.size(), f) == out.size();
    std::fclose(f);
    if (!ok) throw io_error("short write on image: " + path);
}

inline uint8_t to_byte(float v01) {
    const float v = v01 < 0.f ? 0.f : (v01 > 1.f ? 1.f : v01);
    return static_cast<uint8_t>(v * 255.0f + 0.5f);
}

// Composes rows x cols tiles of side x side canonical [0,1] images into one
// grayscale sheet with 2px separators.
inline std::vector<uint8_t> compose_tile_sheet(const std::vector<const float*>& tiles,
                                               int64_t rows, int64_t cols, int64_t side,
                                               int64_t* out_w, int64_t* out_h) {
    const int64_t gap = 2;
    const int64_t W = cols * side + (cols - 1) * gap;
    const int64_t H = rows * side + (rows - 1) * gap;
    std::vector<uint8_t> sheet(static_cast<size_t>(W * H), 32);  // dark separator
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            const float* src = tiles[static_cast<size_t>(r * cols + c)];
            if (!src) continue;
            for (int64_t y = 0; y < side; ++y)
                for (int64_t x = 0; x < side; ++x)
                    sheet[static_cast<size_t>((r * (side + gap) + y) * W + c * (side + gap) + x)] =
                        to_byte(src[y * side + x]);
        }
    *out_w = W;
    *out_h = H;
    return sheet;
}

}  // namespace ginv
