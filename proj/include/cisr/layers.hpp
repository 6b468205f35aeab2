#pragma once

#include <random>
#include <string>

#include "cisr/ops.hpp"
#include "cisr/parameter_set.hpp"

namespace cisr {

enum class Init { kaiming, zero };

/// Registers `name.weight` (out, in, k, k) and `name.bias` (1, out, 1, 1).
template <class T>
void add_conv(ParameterSet<T>& set, const std::string& name, int out, int in, int k, std::mt19937_64& rng,
              Init init = Init::kaiming) {
    const Shape ws{out, in, k, k};
    set.add(name + ".weight", init == Init::zero ? Tensor<T>(ws) : kaiming_normal<T>(ws, rng));
    set.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
}

/// Same-size convolution using a registered layer.
template <class T>
Tensor<T> apply_conv(const ParameterSet<T>& set, const std::string& name, const Tensor<T>& x,
                     Boundary boundary = Boundary::replicate) {
    const Tensor<T>& w = set.get(name + ".weight");
    return conv2d(x, w, set.get(name + ".bias"), 1, w.h() / 2, boundary);
}

}  // namespace cisr
