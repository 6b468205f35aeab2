#pragma once

// Non-local filter whose weights come from an auxiliary image and whose
// values come from the unprocessed input:
//
//   u(m) = sum_n w(m, n) z(n)
//   w(m, n) = exp(-|P_g(m) - P_g(n)|^2 / h(m)^2) * d(n) / S(m)
//
// P_g(.) is the (2r+1)^2 patch of g around a pixel, d the blocking mask
// (ignored for n = m), and S(m) normalizes each row to one.

#include <cmath>
#include <optional>
#include <vector>

#include "cisr/layers.hpp"

namespace cisr {

struct NonLocalConfig {
    int patch_radius = 2;
    int window_radius = 10;
    double epsilon_h = 1e-2;
    Boundary boundary = Boundary::replicate;
};

/// Parameters of the bandwidth estimator: 3x3 conv to 64, ReLU, 1x1 conv to 1.
template <class T>
void add_bandwidth_params(ParameterSet<T>& set, const std::string& prefix, int in_channels, std::mt19937_64& rng,
                          int hidden = 64) {
    add_conv(set, prefix + "h1", hidden, in_channels, 3, rng);
    add_conv(set, prefix + "h2", 1, hidden, 1, rng);
}

/// Per-pixel bandwidth h = |f(g)| + epsilon_h, shape (N, 1, H, W).
template <class T>
Tensor<T> estimate_h(const Tensor<T>& g, const ParameterSet<T>& params, const std::string& prefix,
                     const NonLocalConfig& cfg) {
    Tensor<T> hidden = relu(apply_conv(params, prefix + "h1", g, cfg.boundary));
    Tensor<T> raw = apply_conv(params, prefix + "h2", hidden, cfg.boundary);
    return add_scalar(abs(raw), static_cast<T>(cfg.epsilon_h));
}

namespace detail {

struct NonLocalGeometry {
    int H, W, C, Cg, r, R;
    Boundary boundary;

    int EH() const { return H + 2 * r; }
    int EW() const { return W + 2 * r; }
    int offsets() const { return (2 * R + 1) * (2 * R + 1); }

    // Candidate for pixel (y, x) at offset (oy, ox); false when it falls
    // outside the image in replicate mode.
    bool candidate(int y, int x, int oy, int ox, int& ny, int& nx) const {
        ny = y + oy;
        nx = x + ox;
        if (boundary == Boundary::periodic) {
            ny = wrap(ny, H);
            nx = wrap(nx, W);
            return true;
        }
        return ny >= 0 && ny < H && nx >= 0 && nx < W;
    }
    int bi(int i, int n) const { return boundary_index(i, n, boundary); }
};

// Squared channel difference between g(B(p)) and g(B(p + off)) over the
// extended domain p in [-r, H + r) x [-r, W + r).
template <class T>
void offset_sqdiff(const T* g, const NonLocalGeometry& geo, int oy, int ox, std::vector<double>& sd) {
    const std::size_t plane = static_cast<std::size_t>(geo.H) * geo.W;
    sd.assign(static_cast<std::size_t>(geo.EH()) * geo.EW(), 0.0);
    for (int ey = 0; ey < geo.EH(); ++ey) {
        const int y0 = geo.bi(ey - geo.r, geo.H);
        const int y1 = geo.bi(ey - geo.r + oy, geo.H);
        for (int ex = 0; ex < geo.EW(); ++ex) {
            const int x0 = geo.bi(ex - geo.r, geo.W);
            const int x1 = geo.bi(ex - geo.r + ox, geo.W);
            double acc = 0.0;
            for (int c = 0; c < geo.Cg; ++c) {
                const double d = static_cast<double>(g[c * plane + y0 * geo.W + x0]) -
                                 static_cast<double>(g[c * plane + y1 * geo.W + x1]);
                acc += d * d;
            }
            sd[static_cast<std::size_t>(ey) * geo.EW() + ex] = acc;
        }
    }
}

// D(m) = sum over the patch window of sd(m + q).
inline void patch_sum(const std::vector<double>& sd, const NonLocalGeometry& geo, std::vector<double>& tmp,
                      std::vector<double>& out) {
    const int EW = geo.EW(), r = geo.r, k = 2 * r + 1;
    tmp.assign(static_cast<std::size_t>(geo.EH()) * geo.W, 0.0);
    for (int ey = 0; ey < geo.EH(); ++ey)
        for (int x = 0; x < geo.W; ++x) {
            double acc = 0.0;
            for (int q = 0; q < k; ++q) acc += sd[static_cast<std::size_t>(ey) * EW + x + q];
            tmp[static_cast<std::size_t>(ey) * geo.W + x] = acc;
        }
    out.assign(static_cast<std::size_t>(geo.H) * geo.W, 0.0);
    for (int y = 0; y < geo.H; ++y)
        for (int x = 0; x < geo.W; ++x) {
            double acc = 0.0;
            for (int q = 0; q < k; ++q) acc += tmp[static_cast<std::size_t>(y + q) * geo.W + x];
            out[static_cast<std::size_t>(y) * geo.W + x] = acc;
        }
}

// Adjoint of patch_sum: spreads gd (H x W) onto the extended domain.
inline void patch_sum_adjoint(const std::vector<double>& gd, const NonLocalGeometry& geo, std::vector<double>& tmp,
                              std::vector<double>& out) {
    const int EW = geo.EW(), k = 2 * geo.r + 1;
    tmp.assign(static_cast<std::size_t>(geo.EH()) * geo.W, 0.0);
    for (int y = 0; y < geo.H; ++y)
        for (int x = 0; x < geo.W; ++x) {
            const double v = gd[static_cast<std::size_t>(y) * geo.W + x];
            if (v == 0.0) continue;
            for (int q = 0; q < k; ++q) tmp[static_cast<std::size_t>(y + q) * geo.W + x] += v;
        }
    out.assign(static_cast<std::size_t>(geo.EH()) * EW, 0.0);
    for (int ey = 0; ey < geo.EH(); ++ey)
        for (int x = 0; x < geo.W; ++x) {
            const double v = tmp[static_cast<std::size_t>(ey) * geo.W + x];
            if (v == 0.0) continue;
            for (int q = 0; q < k; ++q) out[static_cast<std::size_t>(ey) * EW + x + q] += v;
        }
}

// Unnormalized weights for one image, laid out [offset][pixel], together
// with their logits. Excluded or out-of-window candidates get weight 0.
template <class T>
void nonlocal_weights(const T* g, const T* d, const T* h, const NonLocalGeometry& geo, std::vector<double>& logits,
                      std::vector<double>& raw, std::vector<double>& norm) {
    const std::size_t plane = static_cast<std::size_t>(geo.H) * geo.W;
    logits.assign(plane * geo.offsets(), 0.0);
    raw.assign(plane * geo.offsets(), 0.0);
    norm.assign(plane, 0.0);
    std::vector<double> sd, tmp, dist;
    int o = 0;
    for (int oy = -geo.R; oy <= geo.R; ++oy)
        for (int ox = -geo.R; ox <= geo.R; ++ox, ++o) {
            offset_sqdiff(g, geo, oy, ox, sd);
            patch_sum(sd, geo, tmp, dist);
            const bool self = oy == 0 && ox == 0;
            for (int y = 0; y < geo.H; ++y)
                for (int x = 0; x < geo.W; ++x) {
                    int ny, nx;
                    if (!geo.candidate(y, x, oy, ox, ny, nx)) continue;
                    const std::size_t m = static_cast<std::size_t>(y) * geo.W + x;
                    const double mask = self ? 1.0 : static_cast<double>(d[ny * geo.W + nx]);
                    const double hm = static_cast<double>(h[m]);
                    const double logit = -dist[m] / (hm * hm);
                    logits[o * plane + m] = logit;
                    raw[o * plane + m] = mask * std::exp(logit);
                }
        }
    for (int k = 0; k < geo.offsets(); ++k)
        for (std::size_t m = 0; m < plane; ++m) norm[m] += raw[k * plane + m];
}

}  // namespace detail

/// Dense (H*W) x (H*W) row-normalized weight matrix of batch item n, row m
/// holding w(m, .). Meant for inspection of small images.
template <class T>
std::vector<double> nonlocal_weight_matrix(const Tensor<T>& g, const Tensor<T>& d, const Tensor<T>& h,
                                           const NonLocalConfig& cfg, int n = 0) {
    const detail::NonLocalGeometry geo{g.h(), g.w(), 1, g.c(), cfg.patch_radius, cfg.window_radius, cfg.boundary};
    const std::size_t plane = g.shape().plane();
    std::vector<double> logits, raw, norm;
    detail::nonlocal_weights(g.data().data() + n * geo.Cg * plane, d.data().data() + n * plane,
                             h.data().data() + n * plane, geo, logits, raw, norm);
    std::vector<double> w(plane * plane, 0.0);
    int o = 0;
    for (int oy = -geo.R; oy <= geo.R; ++oy)
        for (int ox = -geo.R; ox <= geo.R; ++ox, ++o)
            for (int y = 0; y < geo.H; ++y)
                for (int x = 0; x < geo.W; ++x) {
                    const std::size_t m = static_cast<std::size_t>(y) * geo.W + x;
                    int ny, nx;
                    if (!geo.candidate(y, x, oy, ox, ny, nx)) continue;
                    w[m * plane + static_cast<std::size_t>(ny) * geo.W + nx] += raw[o * plane + m] / norm[m];
                }
    return w;
}

/// Windowed non-local filter. z (N, C, H, W) supplies values; g (N, Cg, H, W)
/// supplies patch similarity; d (N, 1, H, W) is the constant blocking mask;
/// h (N, 1, H, W) the positive bandwidth. Differentiable in z, g and h.
template <class T>
Tensor<T> nonlocal_filter(const Tensor<T>& z, const Tensor<T>& g, const Tensor<T>& d, const Tensor<T>& h,
                          const NonLocalConfig& cfg) {
    const Shape zs = z.shape();
    if (g.n() != zs.n || g.h() != zs.h || g.w() != zs.w)
        throw shape_error("nonlocal_filter: z and g differ", zs, g.shape());
    const Shape mask_shape{zs.n, 1, zs.h, zs.w};
    if (d.shape() != mask_shape) throw shape_error("nonlocal_filter: blocking map does not match z", mask_shape, d.shape());
    if (h.shape() != mask_shape) throw shape_error("nonlocal_filter: bandwidth map does not match z", mask_shape, h.shape());
    if (cfg.patch_radius < 0 || cfg.window_radius < 0) throw std::invalid_argument("nonlocal radii must be >= 0");
    for (T v : h.data())
        if (!(v > T(0))) throw std::invalid_argument("nonlocal_filter: bandwidth must be strictly positive");

    const detail::NonLocalGeometry geo{zs.h, zs.w, zs.c, g.c(), cfg.patch_radius, cfg.window_radius, cfg.boundary};
    const std::size_t plane = zs.plane();
    std::vector<T> out(zs.numel(), T(0));
    std::vector<double> logits, raw, norm;
    for (int n = 0; n < zs.n; ++n) {
        detail::nonlocal_weights(g.data().data() + n * geo.Cg * plane, d.data().data() + n * plane,
                                 h.data().data() + n * plane, geo, logits, raw, norm);
        const T* zn = z.data().data() + n * geo.C * plane;
        T* un = out.data() + n * geo.C * plane;
        std::vector<double> acc(geo.C * plane, 0.0);
        int o = 0;
        for (int oy = -geo.R; oy <= geo.R; ++oy)
            for (int ox = -geo.R; ox <= geo.R; ++ox, ++o)
                for (int y = 0; y < geo.H; ++y)
                    for (int x = 0; x < geo.W; ++x) {
                        const std::size_t m = static_cast<std::size_t>(y) * geo.W + x;
                        const double wgt = raw[o * plane + m];
                        if (wgt == 0.0) continue;
                        int ny, nx;
                        geo.candidate(y, x, oy, ox, ny, nx);
                        const std::size_t src = static_cast<std::size_t>(ny) * geo.W + nx;
                        for (int c = 0; c < geo.C; ++c) acc[c * plane + m] += wgt * zn[c * plane + src];
                    }
        for (int c = 0; c < geo.C; ++c)
            for (std::size_t m = 0; m < plane; ++m) un[c * plane + m] = static_cast<T>(acc[c * plane + m] / norm[m]);
    }

    return make_result<T>(zs, std::move(out), {&z, &g, &h}, [z, g, d, h, geo, plane](auto& node) {
        auto* gz = grad_sink(z);
        auto* gg = grad_sink(g);
        auto* gh = grad_sink(h);
        std::vector<double> logits, raw, norm, sd, tmp, gsd;
        std::vector<double> glogit(plane * geo.offsets());
        std::vector<double> gd(plane);
        for (int n = 0; n < z.n(); ++n) {
            const T* gn = g.data().data() + n * geo.Cg * plane;
            const T* hn = h.data().data() + n * plane;
            const T* zn = z.data().data() + n * geo.C * plane;
            const T* un = node.data.data() + n * geo.C * plane;
            const T* gu = node.grad.data() + n * geo.C * plane;
            detail::nonlocal_weights(gn, d.data().data() + n * plane, hn, geo, logits, raw, norm);

            // ubar(m) = sum_c gu(c, m) u(c, m)
            std::vector<double> ubar(plane, 0.0);
            for (int c = 0; c < geo.C; ++c)
                for (std::size_t m = 0; m < plane; ++m)
                    ubar[m] += static_cast<double>(gu[c * plane + m]) * static_cast<double>(un[c * plane + m]);

            int o = 0;
            for (int oy = -geo.R; oy <= geo.R; ++oy)
                for (int ox = -geo.R; ox <= geo.R; ++ox, ++o)
                    for (int y = 0; y < geo.H; ++y)
                        for (int x = 0; x < geo.W; ++x) {
                            const std::size_t m = static_cast<std::size_t>(y) * geo.W + x;
                            const double wgt = raw[o * plane + m] / norm[m];
                            glogit[o * plane + m] = 0.0;
                            if (wgt == 0.0) continue;
                            int ny, nx;
                            geo.candidate(y, x, oy, ox, ny, nx);
                            const std::size_t src = static_cast<std::size_t>(ny) * geo.W + nx;
                            double a = 0.0;
                            for (int c = 0; c < geo.C; ++c) {
                                const double guc = gu[c * plane + m];
                                a += guc * static_cast<double>(zn[c * plane + src]);
                                if (gz) (*gz)[n * geo.C * plane + c * plane + src] += static_cast<T>(wgt * guc);
                            }
                            glogit[o * plane + m] = wgt * (a - ubar[m]);
                        }

            if (gh) {
                for (int k = 0; k < geo.offsets(); ++k)
                    for (std::size_t m = 0; m < plane; ++m) {
                        const double gl = glogit[k * plane + m];
                        if (gl == 0.0) continue;
                        (*gh)[n * plane + m] += static_cast<T>(gl * -2.0 * logits[k * plane + m] / static_cast<double>(hn[m]));
                    }
            }
            if (!gg) continue;
            T* ggn = gg->data() + n * geo.Cg * plane;
            o = 0;
            for (int oy = -geo.R; oy <= geo.R; ++oy)
                for (int ox = -geo.R; ox <= geo.R; ++ox, ++o) {
                    bool any = false;
                    for (std::size_t m = 0; m < plane; ++m) {
                        const double hm = static_cast<double>(hn[m]);
                        gd[m] = -glogit[o * plane + m] / (hm * hm);
                        any = any || gd[m] != 0.0;
                    }
                    if (!any) continue;
                    detail::patch_sum_adjoint(gd, geo, tmp, gsd);
                    for (int ey = 0; ey < geo.EH(); ++ey) {
                        const int y0 = geo.bi(ey - geo.r, geo.H);
                        const int y1 = geo.bi(ey - geo.r + oy, geo.H);
                        for (int ex = 0; ex < geo.EW(); ++ex) {
                            const double gv = gsd[static_cast<std::size_t>(ey) * geo.EW() + ex];
                            if (gv == 0.0) continue;
                            const int x0 = geo.bi(ex - geo.r, geo.W);
                            const int x1 = geo.bi(ex - geo.r + ox, geo.W);
                            for (int c = 0; c < geo.Cg; ++c) {
                                const std::size_t i0 = c * plane + y0 * geo.W + x0;
                                const std::size_t i1 = c * plane + y1 * geo.W + x1;
                                const double diff2 = 2.0 * (static_cast<double>(gn[i0]) - static_cast<double>(gn[i1])) * gv;
                                ggn[i0] += static_cast<T>(diff2);
                                ggn[i1] -= static_cast<T>(diff2);
                            }
                        }
                    }
                }
        }
    });
}

}  // namespace cisr
