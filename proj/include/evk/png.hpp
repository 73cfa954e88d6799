#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "evk/core.hpp"

namespace evk::png {

/// Interleaved 8-bit RGB image.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // 3 bytes per pixel, row-major

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* pixel(int y, int x) {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* pixel(int y, int x) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        auto* p = pixel(y, x);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void write_chunk(std::ofstream& out, const char type[4],
                        const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> buf;
    put_u32_be(buf, static_cast<std::uint32_t>(payload.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), payload.begin(), payload.end());
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data() + 4, static_cast<uInt>(buf.size() - 4)));
    put_u32_be(buf, crc);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void write_png(const std::filesystem::path& path, const std::uint8_t* pixels, int width,
                      int height, int channels) {
    if (width < 1 || height < 1) throw std::invalid_argument("write_png: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png: cannot open " + path.string());

    static const std::uint8_t signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(signature), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);               // color type: RGB or grayscale
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter
    ihdr.push_back(0);                                   // interlace
    write_chunk(out, "IHDR", ihdr);

    // filter byte 0 (None) before every scanline
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels + y * stride, pixels + (y + 1) * stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: compression failed");
    idat.resize(bound);
    write_chunk(out, "IDAT", idat);
    write_chunk(out, "IEND", {});
    if (!out) throw std::runtime_error("write_png: write failed for " + path.string());
}

}  // namespace detail

inline void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
    detail::write_png(path, img.data.data(), img.width, img.height, 3);
}

inline void write_gray(const std::filesystem::path& path, const GrayImage& img) {
    detail::write_png(path, img.data.data(), img.width, img.height, 1);
}

}  // namespace evk::png
