#pragma once

// Rank-4 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations that see at least
// one input with requires_grad record a backward closure on their output; the
// graph is the set of nodes reachable from a loss through parent links.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cisr {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    constexpr std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    constexpr std::size_t plane() const noexcept {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
        return os.str();
    }
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_error(const std::string& what, const Shape& a, const Shape& b) {
    return ShapeError(what + ": " + a.str() + " vs " + b.str());
}

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard() : saved_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = saved_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
class Tensor {
public:
    using value_type = T;
    using NodeT = detail::Node<T>;

    Tensor() : node_(std::make_shared<NodeT>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
        validate(shape);
        node_->shape = shape;
        node_->data.assign(shape.numel(), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
        validate(shape);
        if (values.size() != shape.numel())
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
        node_->shape = shape;
        node_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
    static Tensor full(Shape shape, T v) { return Tensor(shape, v); }

    const Shape& shape() const noexcept { return node_->shape; }
    std::size_t numel() const noexcept { return node_->data.size(); }
    int n() const noexcept { return node_->shape.n; }
    int c() const noexcept { return node_->shape.c; }
    int h() const noexcept { return node_->shape.h; }
    int w() const noexcept { return node_->shape.w; }

    std::vector<T>& data() noexcept { return node_->data; }
    const std::vector<T>& data() const noexcept { return node_->data; }

    /// Empty when no gradient has reached this tensor.
    std::vector<T>& grad() noexcept { return node_->grad; }
    const std::vector<T>& grad() const noexcept { return node_->grad; }
    bool has_grad() const noexcept { return node_->grad.size() == node_->data.size(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    T& at(int b, int ch, int y, int x) { return node_->data[index(b, ch, y, x)]; }
    T at(int b, int ch, int y, int x) const { return node_->data[index(b, ch, y, x)]; }

    std::size_t index(int b, int ch, int y, int x) const noexcept {
        const Shape& s = node_->shape;
        return ((static_cast<std::size_t>(b) * s.c + ch) * s.h + y) * s.w + x;
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
        return node_->data[0];
    }

    /// Same values, no history, no gradient.
    Tensor detach() const {
        Tensor out(shape(), node_->data);
        return out;
    }

    /// Deep copy preserving requires_grad but not history.
    Tensor clone() const {
        Tensor out = detach();
        out.set_requires_grad(requires_grad());
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> v(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(v));
    }

    bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

    // Graph plumbing for op implementations.
    const std::shared_ptr<NodeT>& node() const noexcept { return node_; }

private:
    static void validate(const Shape& s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative tensor dimension in " + s.str());
    }

    std::shared_ptr<NodeT> node_;
};

/// Creates an op output. The closure runs during backward with the output
/// node; it should read node.grad and accumulate into the inputs it captured.
template <class T, class Fn>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward_fn) {
    Tensor<T> out(shape, std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor<T>* in : inputs)
        if (in->requires_grad()) node.parents.push_back(in->node());
    node.backward_fn = std::forward<Fn>(backward_fn);
    return out;
}

/// Accumulates `g` into the gradient of `t` if it participates in the graph.
template <class T>
inline std::vector<T>* grad_sink(const Tensor<T>& t) {
    if (!t.requires_grad()) return nullptr;
    t.node()->ensure_grad();
    return &t.node()->grad;
}

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate; call
/// zero_grad (or ParameterSet::zero_grad) between steps.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward() requires a scalar loss, got " + loss.shape().str());
    if (!loss.requires_grad()) return;

    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    NodeT& root = *loss.node();
    root.ensure_grad();
    root.grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn(*node);
    }
    // Interior gradients are scratch; release them so repeated sweeps over a
    // retained graph do not double count.
    for (NodeT* node : order)
        if (node->backward_fn) node->grad.clear();
}

}  // namespace cisr
