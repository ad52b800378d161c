#pragma once

// 8-bit lossless raster I/O: PNG (via libpng) and binary PGM/PPM.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"

namespace cvid {

namespace detail {

inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

inline ImageTensor from_bytes(const unsigned char* px, int h, int w, int ch) {
    ImageTensor img(h, w, ch);
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = px[i] / 255.0;
    return img;
}

inline ImageTensor decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw FormatError("invalid PNG " + name + ": " + image.message);
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError("unsupported PNG " + name + ": only 8-bit samples are supported");
    }
    const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("PNG decode failed for " + name + ": " + msg);
    }
    return from_bytes(px.data(), static_cast<int>(image.height), static_cast<int>(image.width), colour ? 3 : 1);
}

// Binary P5/P6 with maxval 255; comments allowed in the header.
inline ImageTensor decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name) {
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            any = true;
            if (v > 1'000'000) throw FormatError("PNM header value too large in " + name);
        }
        if (!any) throw FormatError("malformed PNM header in " + name);
        return v;
    };
    const int ch = bytes[1] == '6' ? 3 : 1;
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw FormatError("unsupported PNM " + name + ": maxval must be 255");
    if (w <= 0 || h <= 0) throw FormatError("PNM " + name + " has zero dimension");
    ++pos;  // single whitespace before raster
    const std::size_t need = static_cast<std::size_t>(w) * h * ch;
    if (bytes.size() < pos + need) throw FormatError("truncated PNM raster in " + name);
    return from_bytes(bytes.data() + pos, static_cast<int>(h), static_cast<int>(w), ch);
}

inline std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
}

}  // namespace detail

inline bool is_supported_image_path(const std::filesystem::path& p) {
    const std::string e = detail::lower_ext(p);
    return e == ".png" || e == ".pgm" || e == ".ppm";
}

/// Loads an 8-bit PNG, PGM or PPM. Sample v maps to v/255.
/// Format is detected from the file signature, not the extension.
inline ImageTensor load_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_all(path);
    static constexpr unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0)
        return detail::decode_png(bytes, path.string());
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
        return detail::decode_pnm(bytes, path.string());
    throw FormatError("unsupported image format: " + path.string());
}

/// Writes with round-to-nearest 8-bit quantization. The container is chosen
/// by extension: .pgm/.ppm write PNM, anything else writes PNG.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
    if (img.empty()) throw ArityError("save_image: empty image");
    std::vector<unsigned char> px(img.size());
    std::transform(img.data().begin(), img.data().end(), px.begin(), detail::quantize8);

    const std::string ext = detail::lower_ext(path);
    if (ext == ".pgm" || ext == ".ppm") {
        if ((ext == ".pgm") != (img.channels() == 1))
            throw FormatError(path.string() + ": extension does not match channel count");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << (img.channels() == 3 ? "P6" : "P5") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
        out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
        if (!out) throw IoError("write failed: " + path.string());
        return;
    }

    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t len = 0;
    if (!png_image_write_to_memory(&image, nullptr, &len, 0, px.data(), 0, nullptr))
        throw IoError("PNG encode failed: " + std::string(image.message));
    std::vector<unsigned char> buf(len);
    if (!png_image_write_to_memory(&image, buf.data(), &len, 0, px.data(), 0, nullptr))
        throw IoError("PNG encode failed: " + std::string(image.message));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(len));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cvid
