#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "cisr/tensor.hpp"

namespace cisr {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over every element, capped at 99 dB.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw shape_error("psnr shape mismatch", a.shape(), b.shape());
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        const double x = i - (size - 1) / 2.0;
        w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

template <class T>
std::vector<double> gray_plane(const Tensor<T>& t, int n) {
    std::vector<double> g(t.shape().plane(), 0.0);
    for (int c = 0; c < t.c(); ++c)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) g[static_cast<std::size_t>(y) * t.w() + x] += t.at(n, c, y, x);
    for (double& v : g) v /= t.c();
    return g;
}

// Valid-mode separable filtering with a symmetric 1-D window.
inline std::vector<double> filter_valid(const std::vector<double>& img, int H, int W, const std::vector<double>& k) {
    const int K = static_cast<int>(k.size());
    const int OH = H - K + 1, OW = W - K + 1;
    std::vector<double> tmp(static_cast<std::size_t>(H) * OW), out(static_cast<std::size_t>(OH) * OW);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < OW; ++x) {
            double acc = 0.0;
            for (int i = 0; i < K; ++i) acc += k[i] * img[static_cast<std::size_t>(y) * W + x + i];
            tmp[static_cast<std::size_t>(y) * OW + x] = acc;
        }
    for (int y = 0; y < OH; ++y)
        for (int x = 0; x < OW; ++x) {
            double acc = 0.0;
            for (int i = 0; i < K; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * OW + x];
            out[static_cast<std::size_t>(y) * OW + x] = acc;
        }
    return out;
}

}  // namespace detail

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean SSIM on the channel-mean image over all full-window positions,
/// averaged across the batch.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
    if (a.shape() != b.shape()) throw shape_error("ssim shape mismatch", a.shape(), b.shape());
    if (a.h() < p.window || a.w() < p.window)
        throw ShapeError("ssim needs images of at least " + std::to_string(p.window) + "x" + std::to_string(p.window) +
                         ", got " + a.shape().str());
    const double C1 = p.k1 * p.k1, C2 = p.k2 * p.k2;
    const auto k = detail::gaussian_window(p.window, p.sigma);
    const int H = a.h(), W = a.w();
    double total = 0.0;
    for (int n = 0; n < a.n(); ++n) {
        const auto ga = detail::gray_plane(a, n);
        const auto gb = detail::gray_plane(b, n);
        std::vector<double> aa(ga.size()), bb(ga.size()), ab(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            aa[i] = ga[i] * ga[i];
            bb[i] = gb[i] * gb[i];
            ab[i] = ga[i] * gb[i];
        }
        const auto mu_a = detail::filter_valid(ga, H, W, k);
        const auto mu_b = detail::filter_valid(gb, H, W, k);
        const auto e_aa = detail::filter_valid(aa, H, W, k);
        const auto e_bb = detail::filter_valid(bb, H, W, k);
        const auto e_ab = detail::filter_valid(ab, H, W, k);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2 * mu_a[i] * mu_b[i] + C1) * (2 * cov + C2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / a.n();
}

struct MetricRow {
    std::string image_id;
    int scale = 0;
    int qf = 0;
    std::string codec_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// Per-image quality rows with a trailing mean.
struct MetricReport {
    std::vector<MetricRow> rows;
    bool with_psnr = true;
    bool with_ssim = true;

    double mean_psnr() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.psnr_db;
        return rows.empty() ? 0.0 : s / rows.size();
    }
    double mean_ssim() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.ssim;
        return rows.empty() ? 0.0 : s / rows.size();
    }

    /// Metrics that were not requested are written as "-".
    void write_tsv(std::ostream& os) const {
        os << "image_id\tscale\tqf\tcodec_id\tpsnr_db\tssim\n";
        for (const auto& r : rows)
            os << r.image_id << '\t' << r.scale << '\t' << r.qf << '\t' << r.codec_id << '\t' << values(r.psnr_db, r.ssim)
               << '\n';
        os << "mean\t-\t-\t-\t" << values(mean_psnr(), mean_ssim()) << '\n';
    }

private:
    static std::string cell(bool on, const char* fmt, double v) {
        if (!on) return "-";
        char buf[32];
        std::snprintf(buf, sizeof buf, fmt, v);
        return buf;
    }
    std::string values(double p, double s) const {
        return cell(with_psnr, "%.4f", p) + '\t' + cell(with_ssim, "%.6f", s);
    }
};

}  // namespace cisr
