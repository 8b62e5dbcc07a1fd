#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <png.h>

#include "renalct/error.hpp"
#include "renalct/grid.hpp"

namespace renalct::png {

namespace detail {

inline void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto *out = static_cast<std::vector<unsigned char> *>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

inline void no_flush(png_structp) {}

template <class Pixel>
std::vector<unsigned char> encode(const Grid<Pixel> &image, int bit_depth) {
    std::vector<unsigned char> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        fail(ErrorKind::data, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(ErrorKind::data, "png_create_info_struct failed");
    }
    // libpng reports errors through longjmp.
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::data, "PNG encoding failed");
    }
    png_set_write_fn(png, &out, append_bytes, no_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols()),
                 static_cast<png_uint_32>(image.rows()), bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(image.cols() * sizeof(Pixel));
    for (std::size_t r = 0; r < image.rows(); ++r) {
        for (std::size_t c = 0; c < image.cols(); ++c) {
            if constexpr (sizeof(Pixel) == 1) {
                row[c] = image(r, c);
            } else {
                // PNG stores 16-bit samples big-endian.
                const auto v = static_cast<std::uint16_t>(image(r, c));
                row[2 * c] = static_cast<unsigned char>(v >> 8);
                row[2 * c + 1] = static_cast<unsigned char>(v & 0xff);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

struct ReadCursor {
    const unsigned char *data;
    std::size_t size;
    std::size_t offset;
};

inline void read_bytes(png_structp png, png_bytep out, png_size_t length) {
    auto *cursor = static_cast<ReadCursor *>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->size)
        png_error(png, "truncated PNG stream");
    std::memcpy(out, cursor->data + cursor->offset, length);
    cursor->offset += length;
}

} // namespace detail

inline std::vector<unsigned char> encode_gray8(const Grid<std::uint8_t> &image) {
    return detail::encode(image, 8);
}

inline std::vector<unsigned char> encode_gray16(const Grid<std::uint16_t> &image) {
    return detail::encode(image, 16);
}

/// Decodes an 8- or 16-bit grayscale PNG; samples are returned unscaled.
inline Grid<std::uint16_t> decode_gray(const std::vector<unsigned char> &bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        fail(ErrorKind::data, "not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    detail::ReadCursor cursor{bytes.data(), bytes.size(), 0};
    Grid<std::uint16_t> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::data, "PNG decoding failed");
    }
    png_set_read_fn(png, &cursor, detail::read_bytes);
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::data, "only 8/16-bit grayscale PNG is supported");
    }
    out = Grid<std::uint16_t>(height, width);
    std::vector<unsigned char> row(png_get_rowbytes(png, info));
    for (std::size_t r = 0; r < height; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t c = 0; c < width; ++c)
            out(r, c) = depth == 8 ? row[c]
                                   : static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void write_file(const std::filesystem::path &path, const std::vector<unsigned char> &bytes) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::data, "cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string base64_encode(const std::vector<unsigned char> &bytes) {
    static constexpr char alphabet[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += alphabet[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size())
            v |= bytes[i + 1] << 8;
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? alphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    std::uint32_t buffer = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=')
            break;
        const int v = value(c);
        if (v < 0)
            fail(ErrorKind::data, "invalid base64 character");
        buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buffer >> bits) & 0xff));
        }
    }
    return out;
}

} // namespace renalct::png
