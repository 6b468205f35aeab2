#pragma once

// Training loop: random aligned crops with shared rotation/flip
// augmentation, unrolled forward, curriculum loss, one Adam step per batch,
// per-epoch validation with early stopping on the best validation PSNR.

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/codec.hpp"
#include "cisr/metrics.hpp"
#include "cisr/unfold.hpp"

namespace cisr {

/// Rotates by k quarter turns counter-clockwise, then optionally mirrors
/// left-right. Gradient-free.
template <class T>
Tensor<T> augment(const Tensor<T>& a, int k, bool flip) {
    k = ((k % 4) + 4) % 4;
    const int H = a.h(), W = a.w();
    const int OH = k % 2 ? W : H, OW = k % 2 ? H : W;
    Tensor<T> out(Shape{a.n(), a.c(), OH, OW});
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c)
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x) {
                    const int xx = flip ? OW - 1 - x : x;
                    int sy = y, sx = xx;
                    switch (k) {
                        case 1: sy = xx, sx = W - 1 - y; break;
                        case 2: sy = H - 1 - y, sx = W - 1 - xx; break;
                        case 3: sy = H - 1 - xx, sx = y; break;
                        default: break;
                    }
                    out.at(n, c, y, x) = a.at(n, c, sy, sx);
                }
    return out;
}

template <class T>
struct Batch {
    Tensor<T> x, y, z;
};

/// Draws cfg.n_patches crops of cfg.patch_size LR pixels. Crop corners sit
/// on the codec's 8-pixel grid where the image allows it, so the blocking
/// map of a crop matches that of the full image.
class BatchSampler {
public:
    BatchSampler(const std::vector<TrainingTriple<float>>& data, const ModelConfig& cfg)
        : data_(data), cfg_(cfg), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
        if (data.empty()) throw std::invalid_argument("training set is empty");
        for (const auto& t : data) {
            if (t.scale != cfg.scale)
                throw std::invalid_argument("training triple has scale " + std::to_string(t.scale) + ", config wants " +
                                            std::to_string(cfg.scale));
            if (t.z.h() < cfg.patch_size || t.z.w() < cfg.patch_size)
                throw std::invalid_argument("patch size " + std::to_string(cfg.patch_size) + " exceeds an LR image of " +
                                            t.z.shape().str());
        }
    }

    Batch<float> next() {
        const int p = cfg_.patch_size, s = cfg_.scale;
        std::vector<Tensor<float>> xs, ys, zs;
        for (int i = 0; i < cfg_.n_patches; ++i) {
            const auto& t = data_[pick(static_cast<int>(data_.size()))];
            const int y0 = corner(t.z.h() - p), x0 = corner(t.z.w() - p);
            const int k = pick(4);
            const bool flip = pick(2) == 1;
            xs.push_back(augment(crop(t.x, y0 * s, x0 * s, p * s, p * s), k, flip));
            ys.push_back(augment(crop(t.y, y0, x0, p, p), k, flip));
            zs.push_back(augment(crop(t.z, y0, x0, p, p), k, flip));
        }
        NoGradGuard ng;
        return {concat_batch(xs), concat_batch(ys), concat_batch(zs)};
    }

private:
    int pick(int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng_)); }
    int corner(int slack) {
        if (slack >= 8) return 8 * pick(slack / 8 + 1);
        return pick(slack + 1);
    }

    const std::vector<TrainingTriple<float>>& data_;
    const ModelConfig& cfg_;
    std::mt19937_64 rng_;
};

/// Mean PSNR of the clamped final iterate over a set of triples.
inline double validation_psnr(const Model<float>& model, const std::vector<TrainingTriple<float>>& data) {
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& t : data) total += psnr(clamp01(forward(t.z, model).final()), t.x);
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

struct TrainOptions {
    std::ostream* log = nullptr;
    int log_every = 1;
    std::optional<Model<float>> resume;
};

struct TrainResult {
    Model<float> model;
    int steps = 0;
    std::vector<double> losses;
    std::vector<double> val_history;
    int best_epoch = -1;
    bool stopped_early = false;
};

inline TrainResult train(const std::vector<TrainingTriple<float>>& train_set,
                         const std::vector<TrainingTriple<float>>& val_set, const ModelConfig& cfg,
                         TrainOptions opts = {}) {
    cfg.validate();
    BatchSampler sampler(train_set, cfg);
    TrainResult res;
    res.model = opts.resume ? std::move(*opts.resume) : Model<float>::init(cfg);
    Model<float>& model = res.model;
    model.cfg = cfg;
    std::optional<Model<float>> best;
    double best_val = -1.0;
    int stale = 0;
    const auto t0 = std::chrono::steady_clock::now();
    if (opts.log) *opts.log << "step\tloss\tpsnr_per_iteration\twall_s\n";

    for (int step = 1; step <= cfg.max_steps; ++step) {
        const Batch<float> b = sampler.next();
        const UnfoldTrace<float> trace = forward(b.z, model);
        const Tensor<float> loss = unfold_loss(trace, b.y, b.x, cfg);
        model.zero_grad();
        backward(loss);
        model.adam_step();
        res.losses.push_back(loss.item());
        res.steps = step;

        if (opts.log && (step % opts.log_every == 0 || step == 1)) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[64];
            std::snprintf(buf, sizeof buf, "%d\t%.6f\t", step, static_cast<double>(loss.item()));
            *opts.log << buf;
            for (std::size_t j = 1; j < trace.x_hats.size(); ++j) {
                std::snprintf(buf, sizeof buf, "%s%.3f", j > 1 ? "," : "", psnr(trace.x_hats[j].detach(), b.x));
                *opts.log << buf;
            }
            std::snprintf(buf, sizeof buf, "\t%.3f\n", wall);
            *opts.log << buf << std::flush;
        }

        if (!val_set.empty() && step % cfg.steps_per_epoch == 0) {
            const double v = validation_psnr(model, val_set);
            res.val_history.push_back(v);
            if (opts.log) *opts.log << "# epoch " << res.val_history.size() << " val_psnr " << v << '\n';
            if (v > best_val) {
                best_val = v;
                best = model.deep_copy();
                res.best_epoch = static_cast<int>(res.val_history.size());
                stale = 0;
            } else if (++stale >= cfg.patience) {
                res.stopped_early = true;
                break;
            }
        }
    }
    if (best) model = std::move(*best);
    return res;
}

}  // namespace cisr
