#include "skyline/io/image.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <png.h>

#include "skyline/error.hpp"
#include "skyline/math.hpp"

namespace skyline::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_impl(const std::string& path, const std::vector<double>& data, int width, int height,
                    int channels, int bit_depth) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(Errc::IoError, "cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(Errc::IoError, "libpng failure writing " + path);
    }
    png_init_io(png, fp.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * channels * (bit_depth / 8));
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width * channels; ++c) {
            const double v = clampd(data[static_cast<std::size_t>(r) * width * channels + c], 0.0, 1.0);
            const unsigned q = static_cast<unsigned>(std::lround(v * scale));
            if (bit_depth == 16) {
                row[static_cast<std::size_t>(c) * 2 + 0] = static_cast<unsigned char>(q >> 8);
                row[static_cast<std::size_t>(c) * 2 + 1] = static_cast<unsigned char>(q & 0xff);
            } else {
                row[static_cast<std::size_t>(c)] = static_cast<unsigned char>(q);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png_rgb8(const std::string& path, const std::vector<double>& rgb, int width, int height) {
    write_png_impl(path, rgb, width, height, 3, 8);
}

void write_png_gray8(const std::string& path, const std::vector<double>& gray, int width, int height) {
    write_png_impl(path, gray, width, height, 1, 8);
}

void write_png_gray16(const std::string& path, const std::vector<double>& gray, int width, int height) {
    write_png_impl(path, gray, width, height, 1, 16);
}

LoadedImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(Errc::IoError, "cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(Errc::ParseError, path + ": not a readable PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    bit_depth = png_get_bit_depth(png, info);

    LoadedImage img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = channels;
    img.bit_depth = bit_depth;
    img.data.resize(static_cast<std::size_t>(w) * h * channels);

    const std::size_t stride = static_cast<std::size_t>(w) * channels * (bit_depth / 8);
    std::vector<unsigned char> row(stride);
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t c = 0; c < static_cast<std::size_t>(w) * channels; ++c) {
            unsigned v;
            if (bit_depth == 16)
                v = (static_cast<unsigned>(row[c * 2]) << 8) | row[c * 2 + 1];
            else
                v = row[c];
            img.data[static_cast<std::size_t>(r) * w * channels + c] = static_cast<double>(v) / scale;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_pfm(const std::string& path, const std::vector<double>& data, int width, int height,
               int channels) {
    if (channels != 1 && channels != 3) fail(Errc::ShapeMismatch, "pfm supports 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    f << (channels == 3 ? "PF" : "Pf") << "\n" << width << " " << height << "\n" << "-1.0" << "\n";
    // rows bottom-to-top
    std::vector<float> row(static_cast<std::size_t>(width) * channels);
    for (int r = height - 1; r >= 0; --r) {
        for (int c = 0; c < width * channels; ++c)
            row[static_cast<std::size_t>(c)] =
                static_cast<float>(data[static_cast<std::size_t>(r) * width * channels + c]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    }
}

std::vector<double> read_pfm(const std::string& path, int* width, int* height, int* channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open " + path);
    std::string magic;
    f >> magic;
    int ch;
    if (magic == "PF")
        ch = 3;
    else if (magic == "Pf")
        ch = 1;
    else
        fail(Errc::ParseError, path + ": not a PFM file");
    int w, h;
    double scale;
    f >> w >> h >> scale;
    f.get(); // single whitespace before the raster
    if (w <= 0 || h <= 0) fail(Errc::ParseError, path + ": bad PFM dimensions");
    if (scale >= 0) fail(Errc::ParseError, path + ": big-endian PFM unsupported");

    std::vector<double> data(static_cast<std::size_t>(w) * h * ch);
    std::vector<float> row(static_cast<std::size_t>(w) * ch);
    for (int r = h - 1; r >= 0; --r) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
        if (!f) fail(Errc::ParseError, path + ": truncated PFM raster");
        for (int c = 0; c < w * ch; ++c)
            data[static_cast<std::size_t>(r) * w * ch + c] = static_cast<double>(row[static_cast<std::size_t>(c)]);
    }
    *width = w;
    *height = h;
    *channels = ch;
    return data;
}

} // namespace skyline::io
