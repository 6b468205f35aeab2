#pragma once

// Adaptive convex combination for the long skip connection:
//   v = t1 * z + t2 * g + t3 * u,   t1 + t2 + t3 = 1 per pixel.

#include <string>
#include <vector>

#include "cisr/layers.hpp"

namespace cisr {

enum class SkipMode { adaptive, z_only, g_only, u_only, none };

/// Per-pixel source weights, one channel per source: shape (N, K, H, W).
template <class T>
struct WeightMaps {
    Tensor<T> maps;

    int sources() const { return maps.c(); }
    Tensor<T> t(int k) const { return select_channels(maps, {k}); }
};

template <class T>
void add_fusion_params(ParameterSet<T>& set, const std::string& prefix, int in_channels, int sources,
                       std::mt19937_64& rng, int hidden = 64) {
    add_conv(set, prefix + "t1", hidden, in_channels, 1, rng);
    add_conv(set, prefix + "t2", sources, hidden, 1, rng);
}

/// 1x1 conv to 64, ReLU, 1x1 conv to one logit per source, softmax per pixel.
template <class T>
WeightMaps<T> estimate_weights(const std::vector<Tensor<T>>& sources, const ParameterSet<T>& params,
                               const std::string& prefix) {
    for (const auto& s : sources)
        if (s.shape() != sources.front().shape())
            throw shape_error("estimate_weights: sources differ in shape", sources.front().shape(), s.shape());
    Tensor<T> x = concat_channels(sources);
    Tensor<T> hidden = relu(apply_conv(params, prefix + "t1", x));
    Tensor<T> logits = apply_conv(params, prefix + "t2", hidden);
    if (logits.c() != static_cast<int>(sources.size()))
        throw ShapeError("estimate_weights: network emits " + std::to_string(logits.c()) + " maps for " +
                         std::to_string(sources.size()) + " sources");
    return WeightMaps<T>{softmax_over_channels(logits)};
}

/// Constant weights selecting a single source.
template <class T>
WeightMaps<T> one_hot_weights(const Shape& like, int sources, int k) {
    Tensor<T> maps(Shape{like.n, sources, like.h, like.w});
    const std::size_t plane = like.plane();
    for (int n = 0; n < like.n; ++n)
        std::fill_n(maps.data().begin() + (static_cast<std::size_t>(n) * sources + k) * plane, plane, T(1));
    return WeightMaps<T>{maps};
}

template <class T>
Tensor<T> fuse(const std::vector<Tensor<T>>& sources, const WeightMaps<T>& t) {
    if (t.sources() != static_cast<int>(sources.size()))
        throw ShapeError("fuse: " + std::to_string(t.sources()) + " weight maps for " +
                         std::to_string(sources.size()) + " sources");
    Tensor<T> v = mul(t.t(0), sources[0]);
    for (std::size_t k = 1; k < sources.size(); ++k) v = add(v, mul(t.t(static_cast<int>(k)), sources[k]));
    return v;
}

template <class T>
Tensor<T> fuse(const Tensor<T>& z, const Tensor<T>& g, const Tensor<T>& u, const WeightMaps<T>& t) {
    return fuse<T>({z, g, u}, t);
}

}  // namespace cisr
