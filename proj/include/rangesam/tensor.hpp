#pragma once
#include <cassert>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "rangesam/rng.hpp"

// Dense n-d tensor with reverse-mode autodiff over a dynamic tape.
// float is the working precision; double instantiations back the
// finite-difference gradient checks.
namespace rangesam::ad {

inline bool& grad_mode() {
    static bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;   // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    T* grad_ptr() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        Tensor t;
        t.n_ = std::make_shared<Node<T>>();
        t.n_->shape = std::move(shape);
        t.n_->data.assign(static_cast<std::size_t>(shape_numel(t.n_->shape)), value);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<Node<T>>();
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.n_->data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    std::int64_t numel() const { return n_->numel(); }

    T* data() { return n_->data.data(); }
    const T* data() const { return n_->data.data(); }
    std::vector<T>& vec() { return n_->data; }
    const std::vector<T>& vec() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    bool has_grad() const { return !n_->grad.empty(); }
    T* grad() { return n_->grad_ptr(); }
    const std::vector<T>& grad_vec() const { return n_->grad; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw std::logic_error("item() on non-scalar tensor");
        return n_->data[0];
    }

    std::shared_ptr<Node<T>> node() const { return n_; }

    // Reverse pass from a scalar output. Seeds d(out)/d(out) = 1 and walks
    // the tape in reverse topological order.
    void backward() {
        if (numel() != 1) throw std::logic_error("backward() requires a scalar output");
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack;
        stack.push_back({n_.get(), 0});
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<T>* p = node->parents[next++].get();
                if (!seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->grad_ptr()[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
        }
    }

private:
    std::shared_ptr<Node<T>> n_;
};

// Attach tape bookkeeping to an op result. `fn` receives the result node
// with its grad populated and must accumulate into parent grads.
template <typename T>
inline void attach(Tensor<T>& out, std::vector<Tensor<T>> parents,
                   std::function<void(Node<T>&)> fn) {
    if (!grad_mode()) return;
    bool any = false;
    for (auto& p : parents) any = any || p.requires_grad();
    if (!any) return;
    out.node()->requires_grad = true;
    for (auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(fn);
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

} // namespace rangesam::ad
