#pragma once

// Artefact-removal (ARM) and resolution-enhancement (REM) modules.
//
// Both share one layout: a non-local front end over (z, g), an adaptive long
// skip over {z, g, u}, and a residual-group backbone with channel attention
// fed by the concatenation [z, g, u, extra]. The ARM takes its g from the
// registered space-to-depth copy of the HR estimate and passes the other
// copies as `extra`; the REM takes g = y_hat and ends in a sub-pixel tail.

#include <optional>
#include <string>
#include <vector>

#include "cisr/blocking.hpp"
#include "cisr/fusion.hpp"
#include "cisr/nonlocal.hpp"

namespace cisr {

struct BackboneConfig {
    int n_groups = 2;
    int n_blocks = 12;
    int n_channels = 64;
    int reduction = 16;

    void validate() const {
        if (n_groups < 1 || n_blocks < 1 || n_channels < 1 || reduction < 1)
            throw std::invalid_argument("backbone sizes must be positive");
        if (n_channels % reduction != 0)
            throw std::invalid_argument("channel-attention reduction must divide the channel count");
    }
    bool operator==(const BackboneConfig&) const = default;
};

enum class ModuleKind { arm, rem };

struct ModuleSpec {
    ModuleKind kind = ModuleKind::arm;
    int scale = 2;
    BackboneConfig backbone;
    NonLocalConfig nonlocal;
    BlockingParams blocking;
    bool disable_nonlocal = false;
    std::optional<double> fixed_h;
    SkipMode skip_mode = SkipMode::adaptive;
    Boundary boundary = Boundary::replicate;

    int image_channels() const { return 3; }
    int skip_sources() const { return disable_nonlocal ? 2 : 3; }
    int extra_channels() const {
        return kind == ModuleKind::arm ? image_channels() * (scale * scale - 1) : 0;
    }
    int head_channels() const { return image_channels() * skip_sources() + extra_channels(); }
    NonLocalConfig nonlocal_config() const {
        NonLocalConfig c = nonlocal;
        c.boundary = boundary;
        return c;
    }

    void validate() const {
        if (scale < 2 || scale > 4) throw std::invalid_argument("scale must be 2, 3 or 4");
        backbone.validate();
        if (skip_mode == SkipMode::u_only && disable_nonlocal)
            throw std::invalid_argument("skip mode u_only needs the non-local operator");
        if (fixed_h && !(*fixed_h > 0.0)) throw std::invalid_argument("fixed bandwidth must be positive");
    }
};

/// 1-based index of the space-to-depth copy registered with the LR grid:
/// round-half-up of (s^2 + 1) / 2.
inline int select_registered_copy(int s) {
    if (s < 2 || s > 4) throw std::invalid_argument("scale must be 2, 3 or 4");
    return (s * s + 2) / 2;
}

// ---------------------------------------------------------------------------
// Backbone

template <class T>
void build_backbone(ParameterSet<T>& set, const std::string& prefix, const BackboneConfig& cfg,
                    std::mt19937_64& rng) {
    cfg.validate();
    const int C = cfg.n_channels;
    const int Cr = C / cfg.reduction;
    for (int g = 0; g < cfg.n_groups; ++g) {
        const std::string gp = prefix + "g" + std::to_string(g) + ".";
        for (int b = 0; b < cfg.n_blocks; ++b) {
            const std::string bp = gp + "b" + std::to_string(b) + ".";
            add_conv(set, bp + "conv1", C, C, 3, rng);
            add_conv(set, bp + "conv2", C, C, 3, rng);
            add_conv(set, bp + "ca_down", Cr, C, 1, rng);
            add_conv(set, bp + "ca_up", C, Cr, 1, rng);
        }
        add_conv(set, gp + "conv", C, C, 3, rng);
    }
    add_conv(set, prefix + "trunk", C, C, 3, rng);
}

/// Channel-attention weights for a block body, shape (N, C, 1, 1).
template <class T>
Tensor<T> channel_attention(const ParameterSet<T>& set, const std::string& bp, const Tensor<T>& body) {
    Tensor<T> squeezed = global_avg_pool(body);
    Tensor<T> hidden = relu(apply_conv(set, bp + "ca_down", squeezed));
    return sigmoid(apply_conv(set, bp + "ca_up", hidden));
}

template <class T>
Tensor<T> backbone_forward(const ParameterSet<T>& set, const std::string& prefix, const BackboneConfig& cfg,
                           const Tensor<T>& x, Boundary boundary) {
    Tensor<T> res = x;
    for (int g = 0; g < cfg.n_groups; ++g) {
        const std::string gp = prefix + "g" + std::to_string(g) + ".";
        const Tensor<T> group_in = res;
        for (int b = 0; b < cfg.n_blocks; ++b) {
            const std::string bp = gp + "b" + std::to_string(b) + ".";
            Tensor<T> body = apply_conv(set, bp + "conv2", relu(apply_conv(set, bp + "conv1", res, boundary)), boundary);
            res = add(res, mul(body, channel_attention(set, bp, body)));
        }
        res = add(apply_conv(set, gp + "conv", res, boundary), group_in);
    }
    return add(apply_conv(set, prefix + "trunk", res, boundary), x);
}

// ---------------------------------------------------------------------------
// Modules

template <class T>
void build_module(ParameterSet<T>& set, const ModuleSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const int C = spec.backbone.n_channels;
    const int img = spec.image_channels();
    if (!spec.disable_nonlocal && !spec.fixed_h) add_bandwidth_params(set, "nl.", img, rng);
    if (spec.skip_mode == SkipMode::adaptive)
        add_fusion_params(set, "skip.", img * spec.skip_sources(), spec.skip_sources(), rng);
    add_conv(set, "head", C, spec.head_channels(), 3, rng);
    build_backbone(set, "body.", spec.backbone, rng);
    if (spec.kind == ModuleKind::arm)
        add_conv(set, "out", img, C, 3, rng, Init::zero);
    else
        add_conv(set, "tail", img * spec.scale * spec.scale, C, 3, rng, Init::zero);
}

/// Intermediate maps of one module evaluation, for inspection.
template <class T>
struct ModuleDebug {
    Tensor<T> g;
    Tensor<T> blocking;
    Tensor<T> h;
    Tensor<T> u;
    Tensor<T> weights;
    Tensor<T> skip;
};

namespace detail {

template <class T>
struct FrontEnd {
    std::vector<Tensor<T>> sources;  // z, g[, u]
    std::optional<Tensor<T>> skip;
};

template <class T>
FrontEnd<T> front_end(const Tensor<T>& z, const Tensor<T>& g, const ParameterSet<T>& params, const ModuleSpec& spec,
                      ModuleDebug<T>* debug) {
    FrontEnd<T> fe;
    fe.sources = {z, g};
    if (debug) debug->g = g.detach();
    if (!spec.disable_nonlocal) {
        const NonLocalConfig nl = spec.nonlocal_config();
        Tensor<T> d = blocking_mask(z, spec.blocking);
        Tensor<T> h = spec.fixed_h ? Tensor<T>(Shape{z.n(), 1, z.h(), z.w()}, static_cast<T>(*spec.fixed_h))
                                   : estimate_h(g, params, "nl.", nl);
        Tensor<T> u = nonlocal_filter(z, g, d, h, nl);
        fe.sources.push_back(u);
        if (debug) {
            debug->blocking = d;
            debug->h = h.detach();
            debug->u = u.detach();
        }
    }
    std::optional<WeightMaps<T>> t;
    switch (spec.skip_mode) {
        case SkipMode::adaptive: t = estimate_weights(fe.sources, params, "skip."); break;
        case SkipMode::z_only: t = one_hot_weights<T>(z.shape(), spec.skip_sources(), 0); break;
        case SkipMode::g_only: t = one_hot_weights<T>(z.shape(), spec.skip_sources(), 1); break;
        case SkipMode::u_only: t = one_hot_weights<T>(z.shape(), spec.skip_sources(), 2); break;
        case SkipMode::none: break;
    }
    if (t) {
        fe.skip = fuse(fe.sources, *t);
        if (debug) {
            debug->weights = t->maps.detach();
            debug->skip = fe.skip->detach();
        }
    }
    return fe;
}

}  // namespace detail

/// ARM: (x_hat at s x, z) -> y_hat at the resolution of z.
template <class T>
Tensor<T> arm_forward(const Tensor<T>& x_hat, const Tensor<T>& z, const ParameterSet<T>& params, const ModuleSpec& spec,
                      ModuleDebug<T>* debug = nullptr) {
    const int s = spec.scale;
    const Shape want{z.n(), z.c(), z.h() * s, z.w() * s};
    if (x_hat.shape() != want) throw shape_error("arm_forward: x_hat must be s times z", want, x_hat.shape());
    if (z.c() != spec.image_channels()) throw ShapeError("arm_forward: expected RGB input, got " + z.shape().str());

    const Tensor<T> copies = space_to_depth(x_hat, s);
    const int k = select_registered_copy(s) - 1;
    std::vector<int> registered, rest;
    for (int c = 0; c < z.c(); ++c)
        for (int i = 0; i < s * s; ++i) (i == k ? registered : rest).push_back(c * s * s + i);
    const Tensor<T> g = select_channels(copies, registered);

    detail::FrontEnd<T> fe = detail::front_end(z, g, params, spec, debug);
    std::vector<Tensor<T>> parts = fe.sources;
    parts.push_back(select_channels(copies, rest));
    Tensor<T> feat = apply_conv(params, "head", concat_channels(parts), spec.boundary);
    feat = backbone_forward(params, "body.", spec.backbone, feat, spec.boundary);
    Tensor<T> out = apply_conv(params, "out", feat, spec.boundary);
    return fe.skip ? add(out, *fe.skip) : out;
}

/// REM: (y_hat, z) at LR -> x_hat at s x.
template <class T>
Tensor<T> rem_forward(const Tensor<T>& y_hat, const Tensor<T>& z, const ParameterSet<T>& params, const ModuleSpec& spec,
                      ModuleDebug<T>* debug = nullptr) {
    if (y_hat.shape() != z.shape()) throw shape_error("rem_forward: y_hat and z differ", y_hat.shape(), z.shape());
    if (z.c() != spec.image_channels()) throw ShapeError("rem_forward: expected RGB input, got " + z.shape().str());
    const int s = spec.scale;

    detail::FrontEnd<T> fe = detail::front_end(z, y_hat, params, spec, debug);
    Tensor<T> feat = apply_conv(params, "head", concat_channels(fe.sources), spec.boundary);
    feat = backbone_forward(params, "body.", spec.backbone, feat, spec.boundary);
    Tensor<T> out = pixel_shuffle(apply_conv(params, "tail", feat, spec.boundary), s);
    return fe.skip ? add(out, bicubic_up(*fe.skip, s, spec.boundary)) : out;
}

}  // namespace cisr
