#pragma once

#include <string>
#include <vector>

namespace skyline::io {

struct LoadedImage {
    int width = 0, height = 0, channels = 0;
    int bit_depth = 8;
    std::vector<double> data; // row-major, normalized to [0,1]
};

// 8-bit PNG, values clamped to [0,1] and quantized.
void write_png_rgb8(const std::string& path, const std::vector<double>& rgb, int width, int height);
void write_png_gray8(const std::string& path, const std::vector<double>& gray, int width, int height);
void write_png_gray16(const std::string& path, const std::vector<double>& gray, int width, int height);

LoadedImage read_png(const std::string& path);

// Portable float map: "PF" (3 channels) / "Pf" (1 channel), 32-bit floats,
// little-endian (negative scale), rows bottom-to-top.
void write_pfm(const std::string& path, const std::vector<double>& data, int width, int height,
               int channels);
std::vector<double> read_pfm(const std::string& path, int* width, int* height, int* channels);

} // namespace skyline::io
