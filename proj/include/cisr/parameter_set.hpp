#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/tensor.hpp"

namespace cisr {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named, ordered learnable tensors plus Adam moment buffers.
template <class T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        std::vector<T> m;
        std::vector<T> v;
    };

    ParameterSet() = default;
    explicit ParameterSet(std::string label) : label_(std::move(label)) {}

    const std::string& label() const noexcept { return label_; }

    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        entries_.push_back(Entry{name, std::move(t), {}, {}});
        return entries_.back().tensor;
    }

    const Tensor<T>& get(const std::string& name) const {
        if (const Entry* e = find(name)) return e->tensor;
        throw std::out_of_range("no parameter named '" + name + "' in set '" + label_ + "'");
    }
    Tensor<T>& get(const std::string& name) {
        return const_cast<Tensor<T>&>(static_cast<const ParameterSet&>(*this).get(name));
    }
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    std::vector<Entry>& entries() noexcept { return entries_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    std::size_t count() const noexcept {
        std::size_t total = 0;
        for (const auto& e : entries_) total += e.tensor.numel();
        return total;
    }

    std::int64_t step() const noexcept { return step_; }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    /// Bias-corrected Adam update; clears gradients afterwards. A parameter
    /// the loss never reached is treated as having a zero gradient.
    void adam_step(const AdamConfig& cfg) {
        ++step_;
        const T b1 = static_cast<T>(cfg.beta1);
        const T b2 = static_cast<T>(cfg.beta2);
        const T eps = static_cast<T>(cfg.eps);
        const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(step_)));
        const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(step_)));
        const T lr = static_cast<T>(cfg.lr);
        for (auto& e : entries_) {
            auto& data = e.tensor.data();
            if (e.m.size() != data.size()) {
                e.m.assign(data.size(), T(0));
                e.v.assign(data.size(), T(0));
            }
            const bool has = e.tensor.has_grad();
            const auto& g = e.tensor.grad();
            for (std::size_t i = 0; i < data.size(); ++i) {
                const T gi = has ? g[i] : T(0);
                e.m[i] = b1 * e.m[i] + (T(1) - b1) * gi;
                e.v[i] = b2 * e.v[i] + (T(1) - b2) * gi * gi;
                const T mhat = e.m[i] / c1;
                const T vhat = e.v[i] / c2;
                data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        zero_grad();
    }

    /// Value copy with fresh tensors and optimizer state.
    ParameterSet deep_copy() const {
        ParameterSet out(label_);
        for (const auto& e : entries_) out.entries_.push_back(Entry{e.name, e.tensor.clone(), e.m, e.v});
        out.step_ = step_;
        return out;
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out(label_);
        for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
        return out;
    }

private:
    const Entry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::string label_;
    std::vector<Entry> entries_;
    std::int64_t step_ = 0;
};

/// Fan-in scaled normal weights: std = sqrt(2 / (in * kh * kw)).
template <class T>
Tensor<T> kaiming_normal(Shape weight_shape, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(weight_shape.c) * weight_shape.h * weight_shape.w;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> t(weight_shape);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace cisr
