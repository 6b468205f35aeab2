#pragma once

// Degradation model: bicubic sub-sampling followed by simulated 8x8 block-DCT
// quantization ("jpegsim").

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cisr/ops.hpp"

namespace cisr {

/// JPEG Annex K luminance table, row-major.
inline constexpr std::array<int, 64> kBaseLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

struct QuantTable {
    std::array<int, 64> values{};
    int quality_factor = 50;

    int at(int row, int col) const { return values[row * 8 + col]; }
};

inline QuantTable build_quant_table(int qf) {
    if (qf < 1 || qf > 100)
        throw std::invalid_argument("quality factor must be in [1, 100], got " + std::to_string(qf));
    const int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
    QuantTable t;
    t.quality_factor = qf;
    for (int i = 0; i < 64; ++i) {
        const int q = (kBaseLuminanceTable[i] * scale + 50) / 100;
        t.values[i] = std::clamp(q, 1, 255);
    }
    return t;
}

namespace detail {

struct DctBasis {
    // basis[u][x] = alpha(u) * cos((2x + 1) u pi / 16)
    std::array<std::array<double, 8>, 8> basis{};

    DctBasis() {
        for (int u = 0; u < 8; ++u) {
            const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x)
                basis[u][x] = alpha * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
        }
    }
};

inline const DctBasis& dct_basis() {
    static const DctBasis b;
    return b;
}

inline double round_half_away(double v) { return v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

}  // namespace detail

/// Orthonormal 8x8 type-II DCT, in place. block[y * 8 + x].
inline void dct8x8(std::array<double, 64>& block) {
    const auto& b = detail::dct_basis().basis;
    std::array<double, 64> tmp{};
    for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
            double acc = 0;
            for (int x = 0; x < 8; ++x) acc += b[u][x] * block[y * 8 + x];
            tmp[y * 8 + u] = acc;
        }
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
            double acc = 0;
            for (int y = 0; y < 8; ++y) acc += b[v][y] * tmp[y * 8 + u];
            block[v * 8 + u] = acc;
        }
}

inline void idct8x8(std::array<double, 64>& block) {
    const auto& b = detail::dct_basis().basis;
    std::array<double, 64> tmp{};
    for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int u = 0; u < 8; ++u) acc += b[u][x] * block[v * 8 + u];
            tmp[v * 8 + x] = acc;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int v = 0; v < 8; ++v) acc += b[v][y] * tmp[v * 8 + x];
            block[y * 8 + x] = acc;
        }
}

/// Quantizes a DCT block against the table and dequantizes it again.
inline void quantize_block(std::array<double, 64>& coeffs, const QuantTable& table) {
    for (int i = 0; i < 64; ++i) {
        const double q = table.values[i];
        coeffs[i] = detail::round_half_away(coeffs[i] / q) * q;
    }
}

/// Simulated block-transform compression of images in [0, 1]. Every channel
/// is coded independently with the luminance table.
template <class T>
Tensor<T> compress(const Tensor<T>& image, const QuantTable& table) {
    const Shape s = image.shape();
    for (T v : image.data())
        if (!(v >= T(0) && v <= T(1)))
            throw std::invalid_argument("compress expects pixel values in [0, 1]");
    const int ph = (s.h + 7) / 8 * 8;
    const int pw = (s.w + 7) / 8 * 8;
    Tensor<T> out(s);
    std::vector<double> padded(static_cast<std::size_t>(ph) * pw);
    std::array<double, 64> block{};
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x)
                    padded[y * pw + x] =
                        static_cast<double>(image.at(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1))) * 255.0 -
                        128.0;
            for (int by = 0; by < ph; by += 8)
                for (int bx = 0; bx < pw; bx += 8) {
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x) block[y * 8 + x] = padded[(by + y) * pw + bx + x];
                    dct8x8(block);
                    quantize_block(block, table);
                    idct8x8(block);
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x) padded[(by + y) * pw + bx + x] = block[y * 8 + x];
                }
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    const double v = std::clamp(padded[y * pw + x] + 128.0, 0.0, 255.0);
                    out.at(n, c, y, x) = static_cast<T>(v / 255.0);
                }
        }
    return out;
}

/// Bicubic sub-sampling by an integer factor.
template <class T>
Tensor<T> downsample(const Tensor<T>& image, int s) {
    if (s < 1) throw std::invalid_argument("downsample factor must be positive");
    if (image.h() % s != 0 || image.w() % s != 0)
        throw ShapeError("downsample: " + image.shape().str() + " not divisible by " + std::to_string(s));
    NoGradGuard guard;
    return bicubic_resize(image, Ratio{1, s});
}

/// Top-left crop to the given spatial size.
template <class T>
Tensor<T> crop(const Tensor<T>& image, int y0, int x0, int h, int w) {
    const Shape s = image.shape();
    if (y0 < 0 || x0 < 0 || y0 + h > s.h || x0 + w > s.w || h < 0 || w < 0)
        throw ShapeError("crop window out of bounds for " + s.str());
    Tensor<T> out(Shape{s.n, s.c, h, w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(n, c, y, x) = image.at(n, c, y0 + y, x0 + x);
    return out;
}

template <class T>
struct TrainingTriple {
    Tensor<T> x;  // ground-truth HR
    Tensor<T> y;  // clean LR
    Tensor<T> z;  // compressed LR
    int scale = 2;
    int qf = 10;
    std::string codec_id = "jpegsim";
};

template <class T>
TrainingTriple<T> make_triple(const Tensor<T>& hr, int s, int qf, std::string codec_id = "jpegsim") {
    if (s < 1) throw std::invalid_argument("scale must be positive");
    const int h = hr.h() / s * s;
    const int w = hr.w() / s * s;
    if (h < 8 * s || w < 8 * s)
        throw std::invalid_argument("image " + hr.shape().str() + " too small for scale " + std::to_string(s) +
                                    " (needs at least " + std::to_string(8 * s) + " pixels per side)");
    TrainingTriple<T> t;
    t.x = crop(hr, 0, 0, h, w);
    // Bicubic overshoot is clipped so the clean LR image stays a valid image.
    t.y = clamp01(downsample(t.x, s));
    t.z = compress(t.y, build_quant_table(qf));
    t.scale = s;
    t.qf = qf;
    t.codec_id = std::move(codec_id);
    return t;
}

}  // namespace cisr
