#pragma once

// Differentiable primitives over Tensor<T>.

#include <cmath>
#include <numeric>
#include <span>

#include <Eigen/Core>

#include "cisr/tensor.hpp"

namespace cisr {

/// Boundary handling shared by convolution padding, resampling and the
/// non-local search. `replicate` means zero padding for convolutions and edge
/// clamping for samplers; `periodic` wraps everything on a torus.
enum class Boundary { replicate, periodic };

namespace detail {

inline int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

inline int boundary_index(int i, int n, Boundary b) {
    return b == Boundary::periodic ? wrap(i, n) : clamp_index(i, n);
}

struct BroadcastPlan {
    Shape out;
    std::size_t sa[4];
    std::size_t sb[4];
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    const int da[4] = {a.n, a.c, a.h, a.w};
    const int db[4] = {b.n, b.c, b.h, b.w};
    int dout[4];
    for (int i = 0; i < 4; ++i) {
        if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
            throw shape_error(std::string(op) + ": shapes are not broadcast-compatible", a, b);
        dout[i] = std::max(da[i], db[i]);
    }
    BroadcastPlan p;
    p.out = Shape{dout[0], dout[1], dout[2], dout[3]};
    std::size_t ra = 1, rb = 1;
    for (int i = 3; i >= 0; --i) {
        p.sa[i] = da[i] == 1 ? 0 : ra;
        p.sb[i] = db[i] == 1 ? 0 : rb;
        ra *= static_cast<std::size_t>(da[i]);
        rb *= static_cast<std::size_t>(db[i]);
    }
    return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    std::size_t o = 0;
    for (int n = 0; n < p.out.n; ++n)
        for (int c = 0; c < p.out.c; ++c)
            for (int y = 0; y < p.out.h; ++y) {
                std::size_t ia = n * p.sa[0] + c * p.sa[1] + y * p.sa[2];
                std::size_t ib = n * p.sb[0] + c * p.sb[1] + y * p.sb[2];
                for (int x = 0; x < p.out.w; ++x, ++o, ia += p.sa[3], ib += p.sb[3]) f(o, ia, ib);
            }
}

template <class T, class Fwd, class Da, class Db>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                           Da da, Db db) {
    const BroadcastPlan plan = broadcast_plan(a.shape(), b.shape(), name);
    std::vector<T> out(plan.out.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = fwd(av[ia], bv[ib]);
    });
    return make_result<T>(plan.out, std::move(out), {&a, &b}, [a, b, plan, da, db](auto& node) {
        const auto& av = a.data();
        const auto& bv = b.data();
        auto* ga = grad_sink(a);
        auto* gb = grad_sink(b);
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            const T g = node.grad[o];
            if (ga) (*ga)[ia] += g * da(av[ia], bv[ib]);
            if (gb) (*gb)[ib] += g * db(av[ia], bv[ib]);
        });
    });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
    std::vector<T> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    return make_result<T>(a.shape(), out, {&a}, [a, deriv](auto& node) {
        auto* ga = grad_sink(a);
        const auto& av = a.data();
        for (std::size_t i = 0; i < av.size(); ++i)
            (*ga)[i] += node.grad[i] * deriv(av[i], node.data[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

/// Gradient at exactly zero is zero.
template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary(
        a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

/// Not differentiable; used only when emitting images.
template <class T>
Tensor<T> clamp01(const Tensor<T>& a) {
    Tensor<T> out = a.detach();
    for (T& v : out.data()) v = std::clamp(v, T(0), T(1));
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v;
    return make_result<T>(Shape{1, 1, 1, 1}, {s}, {&a}, [a](auto& node) {
        auto* ga = grad_sink(a);
        for (T& g : *ga) g += node.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(std::max<std::size_t>(a.numel(), 1)));
}

/// Mean absolute difference over all elements, as a scalar.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw shape_error("l1_loss shape mismatch", a.shape(), b.shape());
    return mean(abs(sub(a, b)));
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
    const Shape s = a.shape();
    if (s.h < 1 || s.w < 1) throw ShapeError("global_avg_pool needs H, W >= 1, got " + s.str());
    const std::size_t plane = s.plane();
    std::vector<T> out(static_cast<std::size_t>(s.n) * s.c);
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        T acc = 0;
        for (std::size_t k = 0; k < plane; ++k) acc += av[i * plane + k];
        out[i] = acc / static_cast<T>(plane);
    }
    return make_result<T>(Shape{s.n, s.c, 1, 1}, std::move(out), {&a}, [a, plane](auto& node) {
        auto* ga = grad_sink(a);
        for (std::size_t i = 0; i < node.data.size(); ++i) {
            const T g = node.grad[i] / static_cast<T>(plane);
            for (std::size_t k = 0; k < plane; ++k) (*ga)[i * plane + k] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Channel plumbing

/// Softmax across the channel axis at every (n, y, x).
template <class T>
Tensor<T> softmax_over_channels(const Tensor<T>& a) {
    const Shape s = a.shape();
    if (s.c < 1) throw ShapeError("softmax_over_channels needs at least one channel");
    const std::size_t plane = s.plane();
    std::vector<T> out(a.numel());
    const auto& av = a.data();
    for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            T mx = av[base + p];
            for (int c = 1; c < s.c; ++c) mx = std::max(mx, av[base + c * plane + p]);
            T z = 0;
            for (int c = 0; c < s.c; ++c) {
                const T e = std::exp(av[base + c * plane + p] - mx);
                out[base + c * plane + p] = e;
                z += e;
            }
            for (int c = 0; c < s.c; ++c) out[base + c * plane + p] /= z;
        }
    }
    return make_result<T>(s, std::move(out), {&a}, [a, s, plane](auto& node) {
        auto* ga = grad_sink(a);
        for (int n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                T dot = 0;
                for (int c = 0; c < s.c; ++c)
                    dot += node.grad[base + c * plane + p] * node.data[base + c * plane + p];
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    (*ga)[i] += node.data[i] * (node.grad[i] - dot);
                }
            }
        }
    });
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels of nothing");
    Shape s = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& q = p.shape();
        if (q.n != s.n || q.h != s.h || q.w != s.w)
            throw shape_error("concat_channels spatial/batch mismatch", s, q);
        channels += q.c;
    }
    const Shape out_shape{s.n, channels, s.h, s.w};
    const std::size_t plane = s.plane();
    std::vector<T> out(out_shape.numel());
    int offset = 0;
    for (const auto& p : parts) {
        for (int n = 0; n < s.n; ++n)
            std::copy_n(p.data().begin() + static_cast<std::size_t>(n) * p.c() * plane,
                        static_cast<std::size_t>(p.c()) * plane,
                        out.begin() + (static_cast<std::size_t>(n) * channels + offset) * plane);
        offset += p.c();
    }
    Tensor<T> result(out_shape, std::move(out));
    if (!grad_enabled()) return result;
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (!any) return result;
    auto& node = *result.node();
    node.requires_grad = true;
    for (const auto& p : parts)
        if (p.requires_grad()) node.parents.push_back(p.node());
    node.backward_fn = [parts, channels, plane](auto& nd) {
        int off = 0;
        for (const auto& p : parts) {
            if (auto* gp = grad_sink(p)) {
                for (int n = 0; n < p.n(); ++n) {
                    const std::size_t src = (static_cast<std::size_t>(n) * channels + off) * plane;
                    const std::size_t dst = static_cast<std::size_t>(n) * p.c() * plane;
                    for (std::size_t k = 0; k < static_cast<std::size_t>(p.c()) * plane; ++k)
                        (*gp)[dst + k] += nd.grad[src + k];
                }
            }
            off += p.c();
        }
    };
    return result;
}

/// Gathers the listed channels, in order.
template <class T>
Tensor<T> select_channels(const Tensor<T>& a, std::vector<int> channels) {
    const Shape s = a.shape();
    for (int c : channels)
        if (c < 0 || c >= s.c)
            throw ShapeError("select_channels index " + std::to_string(c) + " out of range for " +
                             s.str());
    const int k = static_cast<int>(channels.size());
    const std::size_t plane = s.plane();
    const Shape out_shape{s.n, k, s.h, s.w};
    std::vector<T> out(out_shape.numel());
    for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < k; ++i)
            std::copy_n(a.data().begin() + (static_cast<std::size_t>(n) * s.c + channels[i]) * plane,
                        plane, out.begin() + (static_cast<std::size_t>(n) * k + i) * plane);
    return make_result<T>(out_shape, std::move(out), {&a}, [a, channels, s, k, plane](auto& node) {
        auto* ga = grad_sink(a);
        for (int n = 0; n < s.n; ++n)
            for (int i = 0; i < k; ++i) {
                const std::size_t dst = (static_cast<std::size_t>(n) * s.c + channels[i]) * plane;
                const std::size_t src = (static_cast<std::size_t>(n) * k + i) * plane;
                for (std::size_t p = 0; p < plane; ++p) (*ga)[dst + p] += node.grad[src + p];
            }
    });
}

/// Stacks same-shaped tensors along the batch axis.
template <class T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_batch of nothing");
    const Shape s = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.c() != s.c || p.h() != s.h || p.w() != s.w)
            throw shape_error("concat_batch mismatch", s, p.shape());
        total += p.n();
    }
    const Shape out_shape{total, s.c, s.h, s.w};
    std::vector<T> out;
    out.reserve(out_shape.numel());
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    Tensor<T> result(out_shape, std::move(out));
    if (!grad_enabled()) return result;
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (!any) return result;
    auto& node = *result.node();
    node.requires_grad = true;
    for (const auto& p : parts)
        if (p.requires_grad()) node.parents.push_back(p.node());
    node.backward_fn = [parts](auto& nd) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (auto* gp = grad_sink(p))
                for (std::size_t k = 0; k < p.numel(); ++k) (*gp)[k] += nd.grad[off + k];
            off += p.numel();
        }
    };
    return result;
}

/// Slices batch items [first, first + count).
template <class T>
Tensor<T> slice_batch(const Tensor<T>& a, int first, int count) {
    const Shape s = a.shape();
    if (first < 0 || count < 0 || first + count > s.n)
        throw ShapeError("slice_batch range out of bounds for " + s.str());
    const std::size_t item = static_cast<std::size_t>(s.c) * s.plane();
    const Shape out_shape{count, s.c, s.h, s.w};
    std::vector<T> out(a.data().begin() + first * item, a.data().begin() + (first + count) * item);
    return make_result<T>(out_shape, std::move(out), {&a}, [a, first, item](auto& node) {
        auto* ga = grad_sink(a);
        for (std::size_t k = 0; k < node.grad.size(); ++k) (*ga)[first * item + k] += node.grad[k];
    });
}

// ---------------------------------------------------------------------------
// Sub-pixel rearrangement
//
// Copy index convention for factor s: output channel c * s*s + dy * s + dx
// holds input pixel (y * s + dy, x * s + dx) of channel c.

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& a, int s) {
    const Shape in = a.shape();
    if (s < 1 || in.c % (s * s) != 0)
        throw ShapeError("pixel_shuffle: channels of " + in.str() + " not divisible by " +
                         std::to_string(s * s));
    const Shape out_shape{in.n, in.c / (s * s), in.h * s, in.w * s};
    std::vector<std::size_t> src(out_shape.numel());
    std::size_t o = 0;
    for (int n = 0; n < out_shape.n; ++n)
        for (int c = 0; c < out_shape.c; ++c)
            for (int y = 0; y < out_shape.h; ++y)
                for (int x = 0; x < out_shape.w; ++x, ++o)
                    src[o] = a.index(n, c * s * s + (y % s) * s + (x % s), y / s, x / s);
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = a.data()[src[i]];
    return make_result<T>(out_shape, std::move(out), {&a}, [a, src](auto& node) {
        auto* ga = grad_sink(a);
        for (std::size_t i = 0; i < src.size(); ++i) (*ga)[src[i]] += node.grad[i];
    });
}

template <class T>
Tensor<T> space_to_depth(const Tensor<T>& a, int s) {
    const Shape in = a.shape();
    if (s < 1 || in.h % s != 0 || in.w % s != 0)
        throw ShapeError("space_to_depth: spatial dims of " + in.str() + " not divisible by " +
                         std::to_string(s));
    const Shape out_shape{in.n, in.c * s * s, in.h / s, in.w / s};
    std::vector<std::size_t> src(out_shape.numel());
    std::size_t o = 0;
    for (int n = 0; n < out_shape.n; ++n)
        for (int oc = 0; oc < out_shape.c; ++oc) {
            const int c = oc / (s * s);
            const int dy = (oc % (s * s)) / s;
            const int dx = oc % s;
            for (int y = 0; y < out_shape.h; ++y)
                for (int x = 0; x < out_shape.w; ++x, ++o)
                    src[o] = a.index(n, c, y * s + dy, x * s + dx);
        }
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = a.data()[src[i]];
    return make_result<T>(out_shape, std::move(out), {&a}, [a, src](auto& node) {
        auto* ga = grad_sink(a);
        for (std::size_t i = 0; i < src.size(); ++i) (*ga)[src[i]] += node.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    int cin, h, w, kh, kw, stride, pad, oh, ow;
    Boundary boundary;

    std::size_t cols() const { return static_cast<std::size_t>(oh) * ow; }
    std::size_t rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
};

// Column matrix for one batch item: rows (c, ky, kx), columns output pixels.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
    std::size_t r = 0;
    for (int c = 0; c < g.cin; ++c)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx, ++r) {
                T* dst = col + r * g.cols();
                const T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    const bool row_out = iy < 0 || iy >= g.h;
                    if (row_out && g.boundary == Boundary::periodic) iy = wrap(iy, g.h);
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.stride - g.pad + kx;
                        if (g.boundary == Boundary::periodic) {
                            *dst++ = plane[static_cast<std::size_t>(iy) * g.w + wrap(ix, g.w)];
                        } else if (row_out || ix < 0 || ix >= g.w) {
                            *dst++ = T(0);
                        } else {
                            *dst++ = plane[static_cast<std::size_t>(iy) * g.w + ix];
                        }
                    }
                }
            }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
    std::size_t r = 0;
    for (int c = 0; c < g.cin; ++c)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx, ++r) {
                const T* src = col + r * g.cols();
                T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ky;
                    const bool row_out = iy < 0 || iy >= g.h;
                    if (row_out && g.boundary == Boundary::periodic) iy = wrap(iy, g.h);
                    for (int ox = 0; ox < g.ow; ++ox, ++src) {
                        int ix = ox * g.stride - g.pad + kx;
                        if (g.boundary == Boundary::periodic) {
                            plane[static_cast<std::size_t>(iy) * g.w + wrap(ix, g.w)] += *src;
                        } else if (!row_out && ix >= 0 && ix < g.w) {
                            plane[static_cast<std::size_t>(iy) * g.w + ix] += *src;
                        }
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation. weight (out, in, kh, kw); bias (1, out, 1, 1) or empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0, Boundary boundary = Boundary::replicate) {
    const Shape in = input.shape();
    const Shape ws = weight.shape();
    if (ws.c != in.c) throw shape_error("conv2d input channels do not match weight", in, ws);
    const bool has_bias = bias.numel() > 0;
    if (has_bias && (bias.numel() != static_cast<std::size_t>(ws.n)))
        throw shape_error("conv2d bias does not match output channels", bias.shape(), ws);
    if (stride < 1 || padding < 0) throw ShapeError("conv2d needs stride >= 1 and padding >= 0");
    detail::ConvGeometry g{in.c, in.h, in.w, ws.h, ws.w, stride, padding, 0, 0, boundary};
    g.oh = (in.h + 2 * padding - ws.h) / stride + 1;
    g.ow = (in.w + 2 * padding - ws.w) / stride + 1;
    if (in.h + 2 * padding < ws.h || in.w + 2 * padding < ws.w || g.oh < 1 || g.ow < 1)
        throw shape_error("conv2d kernel larger than padded input", in, ws);
    if (boundary == Boundary::periodic && (padding > in.h || padding > in.w))
        throw shape_error("conv2d periodic padding exceeds input", in, ws);

    const Shape out_shape{in.n, ws.n, g.oh, g.ow};
    const bool pointwise = ws.h == 1 && ws.w == 1 && stride == 1 && padding == 0;
    const Eigen::Index rows = static_cast<Eigen::Index>(g.rows());
    const Eigen::Index cols = static_cast<Eigen::Index>(g.cols());
    using Mat = detail::RowMat<T>;
    using MapC = Eigen::Map<const Mat>;
    using Map = Eigen::Map<Mat>;

    std::vector<T> out(out_shape.numel());
    std::vector<T> col(pointwise ? 0 : g.rows() * g.cols());
    MapC wmat(weight.data().data(), ws.n, rows);
    const std::size_t in_item = static_cast<std::size_t>(in.c) * in.h * in.w;
    const std::size_t out_item = static_cast<std::size_t>(ws.n) * g.cols();
    for (int n = 0; n < in.n; ++n) {
        const T* src = input.data().data() + n * in_item;
        if (!pointwise) {
            detail::im2col(src, g, col.data());
            src = col.data();
        }
        Map omat(out.data() + n * out_item, ws.n, cols);
        omat.noalias() = wmat * MapC(src, rows, cols);
        if (has_bias)
            for (int o = 0; o < ws.n; ++o) omat.row(o).array() += bias.data()[o];
    }

    return make_result<T>(
        out_shape, std::move(out), {&input, &weight, &bias},
        [input, weight, bias, g, pointwise, has_bias, rows, cols, in_item, out_item](auto& node) {
            const int batch = input.n();
            const int cout = weight.n();
            auto* gin = grad_sink(input);
            auto* gw = grad_sink(weight);
            auto* gb = has_bias ? grad_sink(bias) : nullptr;
            MapC wmat(weight.data().data(), cout, rows);
            std::vector<T> col(pointwise ? 0 : g.rows() * g.cols());
            std::vector<T> dcol(pointwise || !gin ? 0 : g.rows() * g.cols());
            for (int n = 0; n < batch; ++n) {
                MapC gout(node.grad.data() + n * out_item, cout, cols);
                if (gw) {
                    const T* src = input.data().data() + n * in_item;
                    if (!pointwise) {
                        detail::im2col(src, g, col.data());
                        src = col.data();
                    }
                    Map(gw->data(), cout, rows).noalias() += gout * MapC(src, rows, cols).transpose();
                }
                if (gb)
                    for (int o = 0; o < cout; ++o) (*gb)[o] += gout.row(o).sum();
                if (gin) {
                    if (pointwise) {
                        Map(gin->data() + n * in_item, rows, cols).noalias() += wmat.transpose() * gout;
                    } else {
                        Map(dcol.data(), rows, cols).noalias() = wmat.transpose() * gout;
                        detail::col2im(dcol.data(), g, gin->data() + n * in_item);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Bicubic resampling

/// Exact positive rational scale factor.
struct Ratio {
    int num = 1;
    int den = 1;
    double value() const { return static_cast<double>(num) / den; }
};

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

/// One axis of a separable resampler: for every output index, a list of
/// (input index, weight).
struct ResampleAxis {
    int in_size = 0;
    int out_size = 0;
    std::vector<std::vector<std::pair<int, double>>> taps;
};

/// Half-pixel aligned bicubic weights. Downscaling widens the kernel by the
/// inverse scale (antialiased). Weights are normalized to sum to one.
inline ResampleAxis resample_axis(int in_size, int out_size, double scale, Boundary boundary) {
    ResampleAxis ax;
    ax.in_size = in_size;
    ax.out_size = out_size;
    ax.taps.resize(out_size);
    const double kscale = scale < 1.0 ? scale : 1.0;
    const double support = 2.0 / kscale;
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int first = static_cast<int>(std::floor(center - support));
        const int last = static_cast<int>(std::ceil(center + support));
        double total = 0.0;
        std::vector<std::pair<int, double>> raw;
        for (int i = first; i <= last; ++i) {
            const double wgt = keys_cubic((center - i) * kscale);
            if (wgt == 0.0) continue;
            raw.emplace_back(detail::boundary_index(i, in_size, boundary), wgt);
            total += wgt;
        }
        // Merge taps that land on the same input sample, keeping first-seen order.
        auto& taps = ax.taps[o];
        for (auto [idx, wgt] : raw) {
            auto it = std::find_if(taps.begin(), taps.end(), [idx](const auto& t) { return t.first == idx; });
            if (it == taps.end())
                taps.emplace_back(idx, wgt / total);
            else
                it->second += wgt / total;
        }
    }
    return ax;
}

template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& a, Ratio scale, Boundary boundary = Boundary::replicate) {
    if (scale.num <= 0 || scale.den <= 0) throw ShapeError("bicubic_resize needs a positive scale");
    const Shape in = a.shape();
    const double sv = scale.value();
    const int oh = static_cast<int>(std::llround(in.h * sv));
    const int ow = static_cast<int>(std::llround(in.w * sv));
    if (oh < 1 || ow < 1)
        throw ShapeError("bicubic_resize of " + in.str() + " by " + std::to_string(sv) +
                         " yields an empty image");
    const ResampleAxis ay = resample_axis(in.h, oh, sv, boundary);
    const ResampleAxis ax = resample_axis(in.w, ow, sv, boundary);
    const Shape out_shape{in.n, in.c, oh, ow};
    const int planes = in.n * in.c;

    // Horizontal pass into (planes, in.h, ow), then vertical.
    std::vector<double> tmp(static_cast<std::size_t>(planes) * in.h * ow);
    std::vector<T> out(out_shape.numel());
    const auto& av = a.data();
    for (int p = 0; p < planes; ++p) {
        const T* src = av.data() + static_cast<std::size_t>(p) * in.h * in.w;
        double* t = tmp.data() + static_cast<std::size_t>(p) * in.h * ow;
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (auto [i, wgt] : ax.taps[x]) acc += wgt * src[y * in.w + i];
                t[y * ow + x] = acc;
            }
        T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (auto [i, wgt] : ay.taps[y]) acc += wgt * t[i * ow + x];
                dst[y * ow + x] = static_cast<T>(acc);
            }
    }

    return make_result<T>(out_shape, std::move(out), {&a}, [a, ax, ay, planes](auto& node) {
        auto* ga = grad_sink(a);
        const int ih = ay.in_size, iw = ax.in_size, oh = ay.out_size, ow = ax.out_size;
        std::vector<double> tmp(static_cast<std::size_t>(ih) * ow);
        for (int p = 0; p < planes; ++p) {
            std::fill(tmp.begin(), tmp.end(), 0.0);
            const T* g = node.grad.data() + static_cast<std::size_t>(p) * oh * ow;
            for (int y = 0; y < oh; ++y)
                for (auto [i, wgt] : ay.taps[y])
                    for (int x = 0; x < ow; ++x) tmp[i * ow + x] += wgt * g[y * ow + x];
            T* dst = ga->data() + static_cast<std::size_t>(p) * ih * iw;
            for (int y = 0; y < ih; ++y)
                for (int x = 0; x < ow; ++x)
                    for (auto [i, wgt] : ax.taps[x]) dst[y * iw + i] += static_cast<T>(wgt * tmp[y * ow + x]);
        }
    });
}

/// Integer upscaling shorthand.
template <class T>
Tensor<T> bicubic_up(const Tensor<T>& a, int s, Boundary boundary = Boundary::replicate) {
    return bicubic_resize(a, Ratio{s, 1}, boundary);
}

}  // namespace cisr
