#include <gtest/gtest.h>

#include <cmath>

#include "cisr/blocking.hpp"
#include "cisr/codec.hpp"
#include "cisr/nonlocal.hpp"
#include "cisr/testing/oracles.hpp"

using namespace cisr;
namespace oracle = cisr::testing;
using cisr::testing::random_tensor;

namespace {

Tensor<double> ones_mask(int h, int w) { return Tensor<double>(Shape{1, 1, h, w}, 1.0); }

Tensor<double> random_mask(int h, int w, std::uint64_t seed) {
    Tensor<double> d = random_tensor<double>(Shape{1, 1, h, w}, seed, 0, 1);
    for (double& v : d.data()) v = v < 0.3 ? 0.0 : 1.0;
    return d;
}

NonLocalConfig cfg_of(int r, int R) {
    NonLocalConfig c;
    c.patch_radius = r;
    c.window_radius = R;
    return c;
}

}  // namespace

TEST(NonLocal, ZeroWindowIsIdentity) {
    const auto z = random_tensor<double>(Shape{1, 3, 9, 7}, 1, 0, 1);
    const auto g = random_tensor<double>(Shape{1, 3, 9, 7}, 2, 0, 1);
    const auto h = random_tensor<double>(Shape{1, 1, 9, 7}, 3, 0.05, 0.5);
    EXPECT_EQ(nonlocal_filter(z, g, random_mask(9, 7, 4), h, cfg_of(2, 0)).data(), z.data());
}

TEST(NonLocal, ConstantGuideGivesTheWindowMean) {
    const int H = 10, W = 9, R = 2;
    const auto z = random_tensor<double>(Shape{1, 3, H, W}, 5, 0, 1);
    const Tensor<double> g(Shape{1, 3, H, W}, 0.3);
    const auto h = random_tensor<double>(Shape{1, 1, H, W}, 6, 0.01, 2.0);
    const auto u = nonlocal_filter(z, g, ones_mask(H, W), h, cfg_of(1, R));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                int n = 0;
                for (int ny = std::max(0, y - R); ny <= std::min(H - 1, y + R); ++ny)
                    for (int nx = std::max(0, x - R); nx <= std::min(W - 1, x + R); ++nx, ++n) s += z.at(0, c, ny, nx);
                EXPECT_NEAR(u.at(0, c, y, x), s / n, 1e-12);
            }
}

TEST(NonLocal, FullWindowMatchesBruteForce) {
    const auto z = random_tensor<double>(Shape{1, 3, 16, 16}, 7, 0, 1);
    const auto g = random_tensor<double>(Shape{1, 3, 16, 16}, 8, 0, 1);
    const auto h = random_tensor<double>(Shape{1, 1, 16, 16}, 9, 0.5, 2.0);
    const auto d = random_mask(16, 16, 10);
    const auto got = nonlocal_filter(z, g, d, h, cfg_of(2, 16));
    const auto want = oracle::brute_force_nonlocal(z, g, d, h, 2);
    for (std::size_t i = 0; i < got.numel(); ++i) ASSERT_NEAR(got.data()[i], want.data()[i], 1e-5);
}

TEST(NonLocal, RowsAreConvexAndBlockingCandidatesGetNothing) {
    const int H = 12, W = 12;
    const auto g = random_tensor<double>(Shape{1, 3, H, W}, 11, 0, 1);
    const auto h = random_tensor<double>(Shape{1, 1, H, W}, 12, 0.2, 1.0);
    const auto d = random_mask(H, W, 13);
    const auto w = nonlocal_weight_matrix(g, d, h, cfg_of(1, 3));
    const int P = H * W;
    for (int m = 0; m < P; ++m) {
        double s = 0.0;
        for (int n = 0; n < P; ++n) {
            const double v = w[static_cast<std::size_t>(m) * P + n];
            EXPECT_GE(v, 0.0);
            if (n != m && d.data()[n] == 0.0) { EXPECT_EQ(v, 0.0); }
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
        EXPECT_GT(w[static_cast<std::size_t>(m) * P + m], 0.0);
    }
}

TEST(NonLocal, EditsOutsideTheSupportChangeNothing) {
    const int H = 20, W = 20, r = 1, R = 3;
    const auto z = random_tensor<double>(Shape{1, 3, H, W}, 14, 0, 1);
    const auto g = random_tensor<double>(Shape{1, 3, H, W}, 15, 0, 1);
    const auto h = random_tensor<double>(Shape{1, 1, H, W}, 16, 0.2, 1.0);
    const auto d = ones_mask(H, W);
    const auto base = nonlocal_filter(z, g, d, h, cfg_of(r, R));
    const int my = 10, mx = 10;
    // z matters within R of m, g within R + r.
    Tensor<double> z2 = z.clone(), g2 = g.clone();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int dist = std::max(std::abs(y - my), std::abs(x - mx));
                if (dist > R) z2.at(0, c, y, x) += 0.5;
                if (dist > R + r) g2.at(0, c, y, x) -= 0.5;
            }
    const auto moved = nonlocal_filter(z2, g2, d, h, cfg_of(r, R));
    for (int c = 0; c < 3; ++c) EXPECT_EQ(moved.at(0, c, my, mx), base.at(0, c, my, mx));
    EXPECT_NE(moved.at(0, 0, 0, 0), base.at(0, 0, 0, 0));
}

TEST(NonLocal, LargeBandwidthApproachesTheWindowMean) {
    const int H = 12, W = 12, R = 2;
    const auto z = random_tensor<double>(Shape{1, 3, H, W}, 17, 0, 1);
    const auto g = random_tensor<double>(Shape{1, 3, H, W}, 18, 0, 1);
    const Tensor<double> h(Shape{1, 1, H, W}, 1e3);
    const auto u = nonlocal_filter(z, g, ones_mask(H, W), h, cfg_of(2, R));
    const auto mean = nonlocal_filter(z, Tensor<double>(Shape{1, 3, H, W}), ones_mask(H, W), h, cfg_of(2, R));
    for (std::size_t i = 0; i < u.numel(); ++i) EXPECT_NEAR(u.data()[i], mean.data()[i], 1e-3);
}

TEST(NonLocal, OutputStaysInsideTheWindowRange) {
    const int H = 14, W = 11, R = 2;
    const auto z = random_tensor<double>(Shape{1, 3, H, W}, 19, 0, 1);
    const auto g = random_tensor<double>(Shape{1, 3, H, W}, 20, 0, 1);
    const auto h = random_tensor<double>(Shape{1, 1, H, W}, 21, 0.01, 0.3);
    const auto u = nonlocal_filter(z, g, random_mask(H, W, 22), h, cfg_of(1, R));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double lo = 1e9, hi = -1e9;
                for (int ny = std::max(0, y - R); ny <= std::min(H - 1, y + R); ++ny)
                    for (int nx = std::max(0, x - R); nx <= std::min(W - 1, x + R); ++nx) {
                        lo = std::min(lo, z.at(0, c, ny, nx));
                        hi = std::max(hi, z.at(0, c, ny, nx));
                    }
                EXPECT_GE(u.at(0, c, y, x), lo - 1e-12);
                EXPECT_LE(u.at(0, c, y, x), hi + 1e-12);
            }
}

TEST(NonLocal, GradientsInValuesGuideAndBandwidth) {
    const Shape s{1, 2, 6, 6};
    const auto d = random_mask(6, 6, 23);
    for (Boundary b : {Boundary::replicate, Boundary::periodic}) {
        NonLocalConfig c = cfg_of(1, 2);
        c.boundary = b;
        const auto proj = oracle::projection_for(s, 24);
        const auto r = oracle::gradcheck(
            [&](const auto& in) { return sum(mul(nonlocal_filter(in[0], in[1], d, in[2], c), proj)); },
            {random_tensor<double>(s, 25, 0, 1), random_tensor<double>(s, 26, 0, 1),
             random_tensor<double>(Shape{1, 1, 6, 6}, 27, 0.3, 1.0)},
            1e-5);
        EXPECT_LT(r.max_rel_error, 1e-4) << "input " << r.worst_input;
    }
}

TEST(NonLocal, RejectsMismatchedShapes) {
    const Tensor<double> z(Shape{1, 3, 8, 8});
    EXPECT_THROW(nonlocal_filter(z, Tensor<double>(Shape{1, 3, 8, 7}), ones_mask(8, 8), ones_mask(8, 8), cfg_of(1, 1)),
                 ShapeError);
    EXPECT_THROW(nonlocal_filter(z, z, ones_mask(8, 7), ones_mask(8, 8), cfg_of(1, 1)), ShapeError);
}

TEST(Bandwidth, ZeroFinalLayerGivesTheFloor) {
    ParameterSet<float> set("nl");
    std::mt19937_64 rng(1);
    add_bandwidth_params(set, "nl.", 3, rng);
    std::fill(set.get("nl.h2.weight").data().begin(), set.get("nl.h2.weight").data().end(), 0.0f);
    const NonLocalConfig c;
    const auto h = estimate_h(random_tensor<float>(Shape{1, 3, 11, 6}, 2, 0, 1), set, "nl.", c);
    EXPECT_EQ(h.shape(), (Shape{1, 1, 11, 6}));
    for (float v : h.data()) EXPECT_EQ(v, static_cast<float>(c.epsilon_h));
}

TEST(Bandwidth, PositiveForAnyWeights) {
    ParameterSet<float> set("nl");
    std::mt19937_64 rng(3);
    add_bandwidth_params(set, "nl.", 3, rng);
    const auto h = estimate_h(random_tensor<float>(Shape{2, 3, 9, 13}, 4, -1, 2), set, "nl.", NonLocalConfig{});
    EXPECT_EQ(h.shape(), (Shape{2, 1, 9, 13}));
    for (float v : h.data()) EXPECT_GE(v, 1e-2f);
}

TEST(Bandwidth, GradientOfMeanMatchesFiniteDifferences) {
    ParameterSet<double> set("nl");
    std::mt19937_64 rng(5);
    add_bandwidth_params(set, "nl.", 3, rng, 8);
    std::uint64_t seed = 100;
    for (auto& e : set.entries()) {
        const auto jitter = random_tensor<double>(e.tensor.shape(), seed++, -0.05, 0.05);
        for (std::size_t i = 0; i < e.tensor.numel(); ++i) e.tensor.data()[i] += jitter.data()[i];
    }
    const auto g = random_tensor<double>(Shape{1, 3, 5, 5}, 6, 0, 1);
    std::vector<Tensor<double>> params;
    for (auto& e : set.entries()) params.push_back(e.tensor.detach());
    const auto r = oracle::gradcheck(
        [&](const auto& in) {
            ParameterSet<double> p("nl");
            for (std::size_t i = 0; i < in.size(); ++i) p.add(set.entries()[i].name, in[i]);
            return mean(estimate_h(g, p, "nl.", NonLocalConfig{}));
        },
        params, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4) << "input " << r.worst_input;
}
