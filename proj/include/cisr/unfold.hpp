#pragma once

// Recursive parallel-and-series integration of the two modules:
//
//   x_0 = bicubic_s(z)
//   y_j = ARM(x_{j-1}, z),   x_j = REM(y_j, z),   j = 1..J
//
// with parameters shared across iterations, and the curriculum-weighted loss
//   L = 1/J sum_j rho_j (|y_j - y|_1 + gamma |x_j - x|_1).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/network.hpp"

namespace cisr {

enum class Topology { parallel_series, arm_then_rem, rem_then_arm, parallel_fusion };

/// Default curriculum: the two published schedules for J = 3 and J = 5,
/// otherwise a linear ramp j / J.
inline std::vector<double> default_rho(int J) {
    if (J == 3) return {0.3, 0.6, 1.0};
    std::vector<double> rho(J);
    for (int j = 0; j < J; ++j) rho[j] = static_cast<double>(j + 1) / J;
    return rho;
}

struct ModelConfig {
    static ModuleSpec module_of(ModuleKind kind) {
        ModuleSpec m;
        m.kind = kind;
        return m;
    }

    int scale = 2;
    int iterations = 5;
    std::vector<double> rho = default_rho(5);
    double gamma = 1.0;
    ModuleSpec arm = module_of(ModuleKind::arm);
    ModuleSpec rem = module_of(ModuleKind::rem);
    bool share_params = true;
    Topology topology = Topology::parallel_series;
    bool truncate_unroll = true;
    std::uint64_t seed = 0;
    AdamConfig optimizer;
    int n_patches = 32;
    int patch_size = 48;
    int max_steps = 100000;
    int steps_per_epoch = 1000;
    int patience = 5;

    /// Two residual groups of 12 blocks, J = 5.
    static ModelConfig tiny(int s) {
        ModelConfig c;
        c.set_scale(s);
        c.set_iterations(5);
        c.arm.backbone = c.rem.backbone = BackboneConfig{2, 12, 64, 16};
        return c;
    }
    /// Five residual groups of 12 blocks, J = 3.
    static ModelConfig full(int s) {
        ModelConfig c = tiny(s);
        c.set_iterations(3);
        c.arm.backbone = c.rem.backbone = BackboneConfig{5, 12, 64, 16};
        return c;
    }
    /// Desk-scale configuration used by the overfit checks.
    static ModelConfig toy(int s) {
        ModelConfig c = tiny(s);
        c.set_iterations(2);
        c.arm.backbone = c.rem.backbone = BackboneConfig{1, 2, 16, 16};
        c.n_patches = 1;
        c.patch_size = 24;
        return c;
    }

    void set_scale(int s) {
        scale = arm.scale = rem.scale = s;
        arm.kind = ModuleKind::arm;
        rem.kind = ModuleKind::rem;
    }
    void set_iterations(int J) {
        iterations = J;
        rho = default_rho(J);
    }

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
        if (static_cast<int>(rho.size()) != iterations)
            throw std::invalid_argument("rho needs exactly one weight per iteration");
        for (std::size_t j = 1; j < rho.size(); ++j)
            if (rho[j] < rho[j - 1]) throw std::invalid_argument("rho must be non-decreasing");
        if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
        if (arm.scale != scale || rem.scale != scale) throw std::invalid_argument("module scales disagree");
        if (arm.kind != ModuleKind::arm || rem.kind != ModuleKind::rem)
            throw std::invalid_argument("module kinds are swapped");
        arm.validate();
        rem.validate();
        if (topology != Topology::parallel_series && iterations != 1)
            throw std::invalid_argument("ablation topologies run a single pass; set iterations = 1");
        if (n_patches < 1 || patch_size < 1) throw std::invalid_argument("batch shape must be positive");
    }
};

template <class T>
struct Model {
    ModelConfig cfg;
    std::vector<ParameterSet<T>> arm;
    std::vector<ParameterSet<T>> rem;

    static Model init(const ModelConfig& cfg) {
        cfg.validate();
        Model m{cfg, {}, {}};
        std::mt19937_64 rng(cfg.seed);
        const int sets = cfg.share_params ? 1 : cfg.iterations;
        for (int j = 0; j < sets; ++j) {
            m.arm.emplace_back(sets == 1 ? "arm" : "arm." + std::to_string(j + 1));
            build_module(m.arm.back(), cfg.arm, rng);
        }
        for (int j = 0; j < sets; ++j) {
            m.rem.emplace_back(sets == 1 ? "rem" : "rem." + std::to_string(j + 1));
            build_module(m.rem.back(), cfg.rem, rng);
        }
        if (cfg.topology == Topology::parallel_fusion) {
            // Starts as the average of the two branches.
            Tensor<T> w(Shape{3, 6, 3, 3});
            for (int c = 0; c < 3; ++c) {
                w.at(c, c, 1, 1) = T(0.5);
                w.at(c, c + 3, 1, 1) = T(0.5);
            }
            m.rem.front().add("fusion.weight", w);
            m.rem.front().add("fusion.bias", Tensor<T>(Shape{1, 3, 1, 1}));
        }
        return m;
    }

    /// Parameters for iteration j (1-based).
    const ParameterSet<T>& arm_params(int j) const { return arm[cfg.share_params ? 0 : j - 1]; }
    const ParameterSet<T>& rem_params(int j) const { return rem[cfg.share_params ? 0 : j - 1]; }

    std::vector<ParameterSet<T>*> sets() {
        std::vector<ParameterSet<T>*> out;
        for (auto& s : arm) out.push_back(&s);
        for (auto& s : rem) out.push_back(&s);
        return out;
    }
    std::vector<const ParameterSet<T>*> sets() const {
        std::vector<const ParameterSet<T>*> out;
        for (const auto& s : arm) out.push_back(&s);
        for (const auto& s : rem) out.push_back(&s);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* s : sets()) n += s->count();
        return n;
    }

    Model deep_copy() const {
        Model out{cfg, {}, {}};
        for (const auto& s : arm) out.arm.push_back(s.deep_copy());
        for (const auto& s : rem) out.rem.push_back(s.deep_copy());
        return out;
    }

    void zero_grad() {
        for (auto* s : sets()) s->zero_grad();
    }
    void adam_step() {
        for (auto* s : sets()) s->adam_step(cfg.optimizer);
    }
};

template <class T>
struct UnfoldTrace {
    std::vector<Tensor<T>> y_hats;  // y_1 .. y_J
    std::vector<Tensor<T>> x_hats;  // x_0 .. x_J

    const Tensor<T>& final() const { return x_hats.back(); }
};

/// Intermediate maps per iteration, filled when requested.
template <class T>
struct IterationDebug {
    ModuleDebug<T> arm;
    ModuleDebug<T> rem;
};

template <class T>
Tensor<T> initial_estimate(const Tensor<T>& z, const ModelConfig& cfg) {
    return bicubic_up(z, cfg.scale, cfg.rem.boundary);
}

/// Runs the J-iteration recursion. Outputs are not clamped.
template <class T>
UnfoldTrace<T> unfold_infer(const Tensor<T>& z, const Model<T>& model, std::vector<IterationDebug<T>>* debug = nullptr) {
    const ModelConfig& cfg = model.cfg;
    UnfoldTrace<T> trace;
    trace.x_hats.push_back(initial_estimate(z, cfg));
    if (debug) debug->assign(cfg.iterations, {});
    for (int j = 1; j <= cfg.iterations; ++j) {
        const Tensor<T>& prev = trace.x_hats.back();
        const Tensor<T> aux = cfg.truncate_unroll ? prev.detach() : prev;
        Tensor<T> y = arm_forward(aux, z, model.arm_params(j), cfg.arm, debug ? &(*debug)[j - 1].arm : nullptr);
        Tensor<T> x = rem_forward(y, z, model.rem_params(j), cfg.rem, debug ? &(*debug)[j - 1].rem : nullptr);
        trace.y_hats.push_back(std::move(y));
        trace.x_hats.push_back(std::move(x));
    }
    return trace;
}

/// Single-pass ablation topologies. The trace holds x_0 and the final HR
/// output; y_hats holds the LR estimate when the topology produces one.
template <class T>
UnfoldTrace<T> run_topology(const Tensor<T>& z, const Model<T>& model) {
    const ModelConfig& cfg = model.cfg;
    const int s = cfg.scale;
    const ParameterSet<T>& P = model.arm_params(1);
    const ParameterSet<T>& R = model.rem_params(1);
    UnfoldTrace<T> trace;
    trace.x_hats.push_back(initial_estimate(z, cfg));
    const Tensor<T>& x0 = trace.x_hats.front();

    switch (cfg.topology) {
        case Topology::parallel_series: return unfold_infer(z, model);
        case Topology::arm_then_rem: {
            Tensor<T> y = arm_forward(x0, z, P, cfg.arm);
            trace.x_hats.push_back(rem_forward(y, z, R, cfg.rem));
            trace.y_hats.push_back(std::move(y));
            break;
        }
        case Topology::rem_then_arm: {
            // The REM has no LR estimate to lean on, so it sees z twice. The
            // ARM then cleans every space-to-depth copy of the HR output as
            // its own LR image, with the copy's bicubic upsampling standing
            // in for the missing HR auxiliary input.
            const Tensor<T> hr = rem_forward(z, z, R, cfg.rem);
            const Tensor<T> copies = space_to_depth(hr, s);
            const int N = z.n(), C = z.c();
            std::vector<Tensor<T>> lr;
            for (int i = 0; i < s * s; ++i) {
                std::vector<int> ch;
                for (int c = 0; c < C; ++c) ch.push_back(c * s * s + i);
                lr.push_back(select_channels(copies, ch));
            }
            const Tensor<T> stacked = concat_batch(lr);
            const Tensor<T> cleaned = arm_forward(bicubic_up(stacked, s, cfg.arm.boundary), stacked, P, cfg.arm);
            std::vector<Tensor<T>> per_copy;
            for (int i = 0; i < s * s; ++i) per_copy.push_back(slice_batch(cleaned, i * N, N));
            std::vector<int> perm(static_cast<std::size_t>(C) * s * s);
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < s * s; ++i) perm[c * s * s + i] = i * C + c;
            trace.x_hats.push_back(pixel_shuffle(select_channels(concat_channels(per_copy), perm), s));
            break;
        }
        case Topology::parallel_fusion: {
            Tensor<T> y = arm_forward(x0, z, P, cfg.arm);
            const Tensor<T> hr = rem_forward(z, z, R, cfg.rem);
            const Tensor<T> both = concat_channels<T>({bicubic_up(y, s, cfg.arm.boundary), hr});
            trace.x_hats.push_back(conv2d(both, R.get("fusion.weight"), R.get("fusion.bias"), 1, 1));
            trace.y_hats.push_back(std::move(y));
            break;
        }
    }
    return trace;
}

/// Forward pass for whichever topology the model is configured with.
template <class T>
UnfoldTrace<T> forward(const Tensor<T>& z, const Model<T>& model) {
    return model.cfg.topology == Topology::parallel_series ? unfold_infer(z, model) : run_topology(z, model);
}

/// Curriculum-weighted L1 loss. A trace without LR estimates contributes
/// only the HR terms.
template <class T>
Tensor<T> unfold_loss(const UnfoldTrace<T>& trace, const Tensor<T>& y, const Tensor<T>& x, const ModelConfig& cfg) {
    const std::size_t J = cfg.rho.size();
    if (trace.x_hats.size() != J + 1 || (!trace.y_hats.empty() && trace.y_hats.size() != J))
        throw std::invalid_argument("unfold_loss: trace has " + std::to_string(trace.y_hats.size()) + " LR and " +
                                    std::to_string(trace.x_hats.size()) + " HR entries for " + std::to_string(J) +
                                    " loss weights");
    std::optional<Tensor<T>> total;
    for (std::size_t j = 0; j < J; ++j) {
        Tensor<T> term = scale(l1_loss(trace.x_hats[j + 1], x), static_cast<T>(cfg.gamma));
        if (!trace.y_hats.empty()) term = add(l1_loss(trace.y_hats[j], y), term);
        term = scale(term, static_cast<T>(cfg.rho[j] / static_cast<double>(J)));
        total = total ? add(*total, term) : term;
    }
    return *total;
}

}  // namespace cisr
