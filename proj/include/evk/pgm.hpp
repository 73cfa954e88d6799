#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "evk/core.hpp"

namespace evk {

/// Binary 8-bit PGM (P5) writer.
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size()));
    if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

/// Binary 8-bit PGM (P5) reader.
inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path.string());
    int width = 0, height = 0, maxval = 0;
    in >> width >> height >> maxval;
    if (!in || width < 1 || height < 1 || maxval != 255)
        throw std::runtime_error("read_pgm: unsupported header in " + path.string());
    in.get();  // single whitespace after maxval
    GrayImage img(width, height);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!in) throw std::runtime_error("read_pgm: truncated file " + path.string());
    return img;
}

}  // namespace evk
