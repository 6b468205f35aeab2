#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cisr/tensor.hpp"

namespace cisr {

struct BlockingParams {
    int block_size = 8;
    double alpha = 2.0;
    double tau = 2.0 / 255.0;
};

/// 0 marks a pixel adjacent to a block boundary that looks like a coding
/// discontinuity; 1 everywhere else.
struct BlockingMap {
    int height = 0;
    int width = 0;
    int block_size = 8;
    std::vector<std::uint8_t> values;

    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Grid-aligned boundary test on the channel-mean image of batch item `n`.
/// A boundary between rows/columns k-1 and k (k a positive multiple of the
/// block size) is blocking at a position when the step across it exceeds both
/// tau and alpha times the mean step of its in-block neighbours. Both
/// adjacent pixels are then marked.
template <class T>
BlockingMap detect_blocking(const Tensor<T>& z, int n, const BlockingParams& p) {
    if (p.block_size < 2) throw std::invalid_argument("block_size must be at least 2");
    const int H = z.h(), W = z.w(), C = z.c();
    std::vector<double> gray(static_cast<std::size_t>(H) * W, 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) gray[y * W + x] += static_cast<double>(z.at(n, c, y, x));
    for (double& v : gray) v /= C;

    BlockingMap map{H, W, p.block_size, std::vector<std::uint8_t>(static_cast<std::size_t>(H) * W, 1)};
    auto blocking = [&](double cross, double within_sum, int within_n) {
        const double within = within_n > 0 ? within_sum / within_n : 0.0;
        return cross > std::max(p.alpha * within, p.tau);
    };

    for (int k = p.block_size; k < W; k += p.block_size)
        for (int y = 0; y < H; ++y) {
            const double* row = gray.data() + static_cast<std::size_t>(y) * W;
            const double cross = std::abs(row[k] - row[k - 1]);
            double within = 0.0;
            int count = 0;
            if (k - 2 >= 0) within += std::abs(row[k - 1] - row[k - 2]), ++count;
            if (k + 1 < W) within += std::abs(row[k + 1] - row[k]), ++count;
            if (blocking(cross, within, count)) {
                map.values[static_cast<std::size_t>(y) * W + k - 1] = 0;
                map.values[static_cast<std::size_t>(y) * W + k] = 0;
            }
        }

    for (int k = p.block_size; k < H; k += p.block_size)
        for (int x = 0; x < W; ++x) {
            auto g = [&](int y) { return gray[static_cast<std::size_t>(y) * W + x]; };
            const double cross = std::abs(g(k) - g(k - 1));
            double within = 0.0;
            int count = 0;
            if (k - 2 >= 0) within += std::abs(g(k - 1) - g(k - 2)), ++count;
            if (k + 1 < H) within += std::abs(g(k + 1) - g(k)), ++count;
            if (blocking(cross, within, count)) {
                map.values[static_cast<std::size_t>(k - 1) * W + x] = 0;
                map.values[static_cast<std::size_t>(k) * W + x] = 0;
            }
        }
    return map;
}

/// Maps for every batch item as a constant (N, 1, H, W) mask.
template <class T>
Tensor<T> blocking_mask(const Tensor<T>& z, const BlockingParams& p) {
    Tensor<T> mask(Shape{z.n(), 1, z.h(), z.w()});
    const std::size_t plane = z.shape().plane();
    for (int n = 0; n < z.n(); ++n) {
        const BlockingMap m = detect_blocking(z, n, p);
        for (std::size_t i = 0; i < plane; ++i) mask.data()[n * plane + i] = static_cast<T>(m.values[i]);
    }
    return mask;
}

}  // namespace cisr
