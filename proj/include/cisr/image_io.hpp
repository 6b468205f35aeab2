#pragma once

// 8-bit PNG (libpng simplified API) and binary PPM/PGM images as
// (1, C, H, W) float tensors in [0, 1].

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/tensor.hpp"

namespace cisr {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Image = Tensor<float>;

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

inline Image from_bytes(const std::vector<std::uint8_t>& px, int h, int w, int channels) {
    Image img(Shape{1, 3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = channels == 1 ? 0 : c;
                img.at(0, c, y, x) = px[(static_cast<std::size_t>(y) * w + x) * channels + src] / 255.0f;
            }
    return img;
}

inline std::vector<std::uint8_t> to_bytes(const Image& img) {
    const int C = img.c(), H = img.h(), W = img.w();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(C) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const float v = std::clamp(img.at(0, c, y, x), 0.0f, 1.0f);
                px[(static_cast<std::size_t>(y) * W + x) * C + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    return px;
}

inline Image read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return from_bytes(px, static_cast<int>(image.height), static_cast<int>(image.width), 3);
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.w());
    image.height = static_cast<png_uint_32>(img.h());
    image.format = img.c() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const auto px = to_bytes(img);
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

inline int read_pnm_int(std::istream& in) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw IoError("malformed PNM header");
    return v;
}

inline Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5'))
        throw IoError(path.string() + " is not a binary PPM/PGM file");
    const int channels = magic[1] == '6' ? 3 : 1;
    const int w = read_pnm_int(in);
    const int h = read_pnm_int(in);
    const int maxval = read_pnm_int(in);
    if (maxval != 255) throw IoError(path.string() + ": only 8-bit PNM is supported");
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!in) throw IoError(path.string() + ": truncated pixel data");
    return from_bytes(px, h, w, channels);
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << (img.c() == 1 ? "P5" : "P6") << '\n' << img.w() << ' ' << img.h() << "\n255\n";
    const auto px = to_bytes(img);
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace detail

inline bool is_image_file(const std::filesystem::path& p) {
    const std::string e = detail::lower_ext(p);
    return e == ".png" || e == ".ppm" || e == ".pgm" || e == ".pnm";
}

/// Reads an RGB image; grayscale inputs are replicated to three channels.
inline Image read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such image: " + path.string());
    return detail::lower_ext(path) == ".png" ? detail::read_png(path) : detail::read_pnm(path);
}

/// Writes the first batch item of a 1- or 3-channel tensor, rounding to 8 bits.
template <class T>
void write_image(const std::filesystem::path& path, const Tensor<T>& t) {
    if (t.c() != 1 && t.c() != 3) throw IoError("can only write 1- or 3-channel images, got " + t.shape().str());
    Image img(Shape{1, t.c(), t.h(), t.w()});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<float>(t.data()[i]);
    if (detail::lower_ext(path) == ".png")
        detail::write_png(path, img);
    else
        detail::write_pnm(path, img);
}

}  // namespace cisr
