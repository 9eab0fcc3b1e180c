#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "gaitgs/data/silhouette.hpp"

// Grayscale image file IO: binary PGM (P5) and 8-bit PNG. Anything a PNG
// decoder can expand to 8-bit gray is accepted on read; writes always emit
// 8-bit grayscale.

namespace gaitgs::data {

namespace detail {

inline std::string lower_ext(const std::string& path) {
    const auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

/// Skip whitespace and '#' comment lines between PGM header tokens.
inline int next_pgm_token(std::istream& in) {
    int v = -1;
    while (in) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    in >> v;
    return in ? v : -1;
}

}  // namespace detail

inline Image read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    if (magic != "P5") throw std::runtime_error("not a binary PGM (P5): " + path);
    const int w = detail::next_pgm_token(f);
    const int h = detail::next_pgm_token(f);
    const int maxval = detail::next_pgm_token(f);
    if (w < 1 || h < 1) throw std::runtime_error("malformed PGM header: " + path);
    if (maxval < 1 || maxval > 255)
        throw std::runtime_error("unsupported PGM maxval " + std::to_string(maxval) + ": " + path);
    f.get();  // single whitespace byte before the raster
    Image img(Shape{h, w});
    f.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(img.numel()));
    if (!f) throw std::runtime_error("truncated PGM raster: " + path);
    return img;
}

inline void write_pgm(const std::string& path, const Image& img) {
    if (img.rank() != 2) throw std::logic_error("write_pgm expects [H,W], got " + shape_str(img.shape()));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.numel()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

inline Image read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png decoder allocation failed");
    }
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("failed to decode " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    // Expansions above may have introduced an alpha channel (e.g. palette +
    // transparency), so strip unconditionally and verify the final layout.
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 1 || png_get_bit_depth(png, info) != 8)
        longjmp(png_jmpbuf(png), 1);

    img = Image(Shape{static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r)
        rows[r] = img.data() + static_cast<std::size_t>(r) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.rank() != 2) throw std::logic_error("write_png expects [H,W], got " + shape_str(img.shape()));
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png encoder allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("failed to encode " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.dim(1)), static_cast<png_uint_32>(img.dim(0)),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t r = 0; r < img.dim(0); ++r)
        png_write_row(png, const_cast<png_bytep>(img.data() + r * img.dim(1)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline bool supported_image_ext(const std::string& path) {
    const std::string ext = detail::lower_ext(path);
    return ext == ".png" || ext == ".pgm";
}

inline Image read_image(const std::string& path) {
    const std::string ext = detail::lower_ext(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".pgm") return read_pgm(path);
    throw std::runtime_error("unsupported image format: " + path);
}

inline void write_image(const std::string& path, const Image& img) {
    const std::string ext = detail::lower_ext(path);
    if (ext == ".png") return write_png(path, img);
    if (ext == ".pgm") return write_pgm(path, img);
    throw std::runtime_error("unsupported image format: " + path);
}

}  // namespace gaitgs::data
