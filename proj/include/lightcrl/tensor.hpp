#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// The compute graph is define-by-run: every differentiable operation creates a
// fresh result node holding shared references to its operand nodes and a
// closure that pushes the result's gradient into the operands. backward()
// linearizes the graph reachable from a scalar loss in reverse topological
// order (an operand is always recorded before any operation that consumes it)
// and runs the closures. Leaf gradients accumulate across backward() calls;
// interior gradients are reset at the start of each call. A graph and its
// tensors belong to one logical thread for the duration of a forward/backward
// pass; tensors without pending graph links are immutable values and safe to
// share across threads.
//
// Shape rules: binary elementwise operations require exactly equal shapes,
// except that either operand may be a single-element tensor, which broadcasts
// against the other (the only implicit broadcast). Row-level broadcasts are
// separate named operations (add_bias, tile_rows, rowscale).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "lightcrl/errors.hpp"

namespace lightcrl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // sized like value iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backprop; // set iff non-leaf

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (requires_grad && grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

} // namespace detail

template <class S>
class Tensor {
public:
    using Node = detail::TensorNode<S>;

    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        for (std::size_t e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->ensure_grad();
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<S>(n, v), requires_grad);
    }

    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(1), requires_grad);
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    /// Row/column view of a rank-1 or rank-2 tensor (rank-1 counts as one row).
    std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return rank() == 1 ? node_->shape[0] : node_->shape[rank() - 1]; }

    bool requires_grad() const { return node_->requires_grad; }

    std::span<const S> value() const { return node_->value; }
    std::span<S> value_mut() { return node_->value; }
    std::span<const S> grad() const { return node_->grad; }
    std::span<S> grad_mut() { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    S item() const {
        if (size() != 1) throw ContractError("item() requires a single-element tensor, shape is " + shape_str(shape()));
        return node_->value[0];
    }

    S at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    /// Value copy detached from any graph; never requires grad.
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    /// Leaf copy of the current values that does require grad.
    Tensor clone_leaf() const {
        return from_data(node_->shape, node_->value, true);
    }

    /// Reverse-mode sweep from this scalar. Interior gradients are reset,
    /// leaf gradients accumulate across calls.
    void backward() const {
        if (size() != 1) throw ContractError("backward() requires a scalar loss, shape is " + shape_str(shape()));
        std::vector<Node*> order;
        topo_sort(order);
        for (Node* n : order) {
            n->ensure_grad();
            if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), S(0));
        }
        if (node_->requires_grad) node_->grad[0] += S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop && n->requires_grad) n->backprop(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    static Tensor adopt(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    void topo_sort(std::vector<Node*>& order) const {
        // Iterative postorder DFS over parents: operands land before consumers.
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <class S>
std::shared_ptr<TensorNode<S>> make_result(Shape shape, std::vector<S> value,
                                           std::vector<std::shared_ptr<TensorNode<S>>> parents,
                                           std::function<void(TensorNode<S>&)> backprop) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
        n->ensure_grad();
    }
    return n;
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
}

template <class S>
void require_rank2(const Tensor<S>& a, const char* op) {
    if (a.rank() != 2)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(a.shape()));
}

// Accumulates grad into a parent, honoring requires_grad.
template <class S>
void axpy(std::span<const S> g, TensorNode<S>& p, auto&& term) {
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += term(i);
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise family: add, sub, mul (equal shapes or single-element broadcast),
// neg, relu, exp, log
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { add, sub, mul };

template <class S>
Tensor<S> binary_ew(BinKind kind, const Tensor<S>& a, const Tensor<S>& b, const char* name) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!a_scalar && !b_scalar) require_same_shape(a, b, name);

    const Shape& out_shape = b_scalar ? a.shape() : b.shape();
    const std::size_t n = shape_numel(out_shape);
    std::vector<S> out(n);
    auto av = a.value();
    auto bv = b.value();
    for (std::size_t i = 0; i < n; ++i) {
        const S x = a_scalar ? av[0] : av[i];
        const S y = b_scalar ? bv[0] : bv[i];
        switch (kind) {
            case BinKind::add: out[i] = x + y; break;
            case BinKind::sub: out[i] = x - y; break;
            case BinKind::mul: out[i] = x * y; break;
        }
    }
    auto an = a.node();
    auto bn = b.node();
    auto back = [kind, an, bn, a_scalar, b_scalar](TensorNode<S>& r) {
        const std::size_t n = r.value.size();
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                S d;
                switch (kind) {
                    case BinKind::add: d = r.grad[i]; break;
                    case BinKind::sub: d = r.grad[i]; break;
                    case BinKind::mul: d = r.grad[i] * (b_scalar ? bn->value[0] : bn->value[i]); break;
                }
                an->grad[a_scalar ? 0 : i] += d;
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                S d;
                switch (kind) {
                    case BinKind::add: d = r.grad[i]; break;
                    case BinKind::sub: d = -r.grad[i]; break;
                    case BinKind::mul: d = r.grad[i] * (a_scalar ? an->value[0] : an->value[i]); break;
                }
                bn->grad[b_scalar ? 0 : i] += d;
            }
        }
    };
    return Tensor<S>::adopt(make_result<S>(out_shape, std::move(out), {an, bn}, std::move(back)));
}

} // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return detail::binary_ew(detail::BinKind::add, a, b, "add"); }

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return detail::binary_ew(detail::BinKind::sub, a, b, "sub"); }

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return detail::binary_ew(detail::BinKind::mul, a, b, "mul"); }

/// Multiply by a plain constant (no gradient for the constant).
template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> out(a.size());
    auto av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    auto an = a.node();
    auto back = [an, c](detail::TensorNode<S>& r) {
        detail::axpy<S>(r.grad, *an, [&](std::size_t i) { return r.grad[i] * c; });
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an}, std::move(back)));
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) { return scale(a, S(-1)); }

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    auto av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
    auto an = a.node();
    // Subgradient at 0 is 0.
    auto back = [an](detail::TensorNode<S>& r) {
        detail::axpy<S>(r.grad, *an, [&](std::size_t i) { return an->value[i] > S(0) ? r.grad[i] : S(0); });
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an}, std::move(back)));
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    auto av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    auto an = a.node();
    auto back = [an](detail::TensorNode<S>& r) {
        detail::axpy<S>(r.grad, *an, [&](std::size_t i) { return r.grad[i] * r.value[i]; });
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an}, std::move(back)));
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    auto av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(av[i] > S(0)))
            throw DomainError("log: non-positive entry " + std::to_string(static_cast<double>(av[i])) +
                              " at flat index " + std::to_string(i));
        out[i] = std::log(av[i]);
    }
    auto an = a.node();
    auto back = [an](detail::TensorNode<S>& r) {
        detail::axpy<S>(r.grad, *an, [&](std::size_t i) { return r.grad[i] / an->value[i]; });
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an}, std::move(back)));
}

template <class S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S> Tensor<S> operator-(const Tensor<S>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// matmul and layout ops
// ---------------------------------------------------------------------------

namespace detail {

// out[m x n] += A[m x k] * B[k x n], ikj order.
template <class S>
void gemm_acc(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = a[i * k + p];
            if (aip == S(0)) continue;
            const S* brow = b + p * n;
            S* orow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
}

// out[m x k] += G[m x n] * B^T where B is [k x n].
template <class S>
void gemm_nt_acc(const S* g, const S* b, S* out, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            S acc = S(0);
            const S* grow = g + i * n;
            const S* brow = b + j * n;
            for (std::size_t p = 0; p < n; ++p) acc += grow[p] * brow[p];
            out[i * k + j] += acc;
        }
    }
}

// out[k x n] += A^T * G where A is [m x k], G is [m x n].
template <class S>
void gemm_tn_acc(const S* a, const S* g, S* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = a[i * k + p];
            if (aip == S(0)) continue;
            const S* grow = g + i * n;
            S* orow = out + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * grow[j];
        }
    }
}

} // namespace detail

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out(m * n, S(0));
    detail::gemm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    auto back = [an, bn, m, k, n](detail::TensorNode<S>& r) {
        if (an->requires_grad) {
            an->ensure_grad();
            detail::gemm_nt_acc(r.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::gemm_tn_acc(an->value.data(), r.grad.data(), bn->grad.data(), m, k, n);
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({m, n}, std::move(out), {an, bn}, std::move(back)));
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<S> out(r * c);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    auto an = a.node();
    auto back = [an, r, c](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += r_.grad[j * r + i];
    };
    return Tensor<S>::adopt(detail::make_result<S>({c, r}, std::move(out), {an}, std::move(back)));
}

/// Rows r0..r1 (exclusive) of a rank-2 tensor.
template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, std::size_t r0, std::size_t r1) {
    detail::require_rank2(a, "slice_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (r0 >= r1 || r1 > r)
        throw ContractError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                            ") invalid for " + shape_str(a.shape()));
    std::vector<S> out(a.value().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                       a.value().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    auto an = a.node();
    auto back = [an, r0, c](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r_.value.size(); ++i) an->grad[r0 * c + i] += r_.grad[i];
    };
    return Tensor<S>::adopt(detail::make_result<S>({r1 - r0, c}, std::move(out), {an}, std::move(back)));
}

/// Columns c0..c1 (exclusive) of a rank-2 tensor.
template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, std::size_t c0, std::size_t c1) {
    detail::require_rank2(a, "slice_cols");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (c0 >= c1 || c1 > c)
        throw ContractError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                            ") invalid for " + shape_str(a.shape()));
    const std::size_t w = c1 - c0;
    std::vector<S> out(r * w);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * c + c0 + j];
    auto an = a.node();
    auto back = [an, c0, c, w](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const std::size_t rows = r_.shape[0];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < w; ++j) an->grad[i * c + c0 + j] += r_.grad[i * w + j];
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, w}, std::move(out), {an}, std::move(back)));
}

/// Concatenate rank-2 tensors along columns; all parts share the row count.
template <class S>
Tensor<S> hconcat(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("hconcat: no parts");
    for (const auto& p : parts) detail::require_rank2(p, "hconcat");
    const std::size_t r = parts[0].shape()[0];
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.shape()[0] != r)
            throw ShapeError("hconcat: row counts differ, " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.shape()[1];
    }
    std::vector<S> out(r * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[1];
        auto pv = p.value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = pv[i * w + j];
        off += w;
    }
    std::vector<std::shared_ptr<detail::TensorNode<S>>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    auto back = [pnodes, r, total](detail::TensorNode<S>& r_) {
        std::size_t off = 0;
        for (auto& pn : pnodes) {
            const std::size_t w = pn->shape[1];
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) pn->grad[i * w + j] += r_.grad[i * total + off + j];
            }
            off += w;
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, total}, std::move(out), std::move(pnodes), std::move(back)));
}

template <class S>
Tensor<S> hconcat(const Tensor<S>& a, const Tensor<S>& b) {
    return hconcat(std::vector<Tensor<S>>{a, b});
}

/// Repeat a [1 x d] row k times into [k x d].
template <class S>
Tensor<S> tile_rows(const Tensor<S>& a, std::size_t k) {
    detail::require_rank2(a, "tile_rows");
    if (a.shape()[0] != 1)
        throw ShapeError("tile_rows: expected a single row, got " + shape_str(a.shape()));
    if (k == 0) throw ContractError("tile_rows: zero repeat count");
    const std::size_t d = a.shape()[1];
    std::vector<S> out(k * d);
    auto av = a.value();
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[j];
    auto an = a.node();
    auto back = [an, k, d](detail::TensorNode<S>& r) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < d; ++j) an->grad[j] += r.grad[i * d + j];
    };
    return Tensor<S>::adopt(detail::make_result<S>({k, d}, std::move(out), {an}, std::move(back)));
}

/// a[k x d] + bias[d] broadcast over rows. The named (non-implicit) row broadcast.
template <class S>
Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& bias) {
    detail::require_rank2(a, "add_bias");
    if (bias.rank() != 1 || bias.shape()[0] != a.shape()[1])
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], d = a.shape()[1];
    std::vector<S> out(r * d);
    auto av = a.value();
    auto bv = bias.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] + bv[j];
    auto an = a.node();
    auto bn = bias.node();
    auto back = [an, bn, r, d](detail::TensorNode<S>& r_) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < r * d; ++i) an->grad[i] += r_.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < d; ++j) bn->grad[j] += r_.grad[i * d + j];
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, d}, std::move(out), {an, bn}, std::move(back)));
}

/// Scale row i of a[k x d] by s[i], s of shape [k x 1].
template <class S>
Tensor<S> rowscale(const Tensor<S>& a, const Tensor<S>& s) {
    detail::require_rank2(a, "rowscale");
    if (s.rank() != 2 || s.shape()[1] != 1 || s.shape()[0] != a.shape()[0])
        throw ShapeError("rowscale: scale " + shape_str(s.shape()) + " must be [" + std::to_string(a.shape()[0]) + "x1]");
    const std::size_t r = a.shape()[0], d = a.shape()[1];
    std::vector<S> out(r * d);
    auto av = a.value();
    auto sv = s.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] * sv[i];
    auto an = a.node();
    auto sn = s.node();
    auto back = [an, sn, r, d](detail::TensorNode<S>& r_) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < d; ++j) an->grad[i * d + j] += r_.grad[i * d + j] * sn->value[i];
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                S acc = S(0);
                for (std::size_t j = 0; j < d; ++j) acc += r_.grad[i * d + j] * an->value[i * d + j];
                sn->grad[i] += acc;
            }
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, d}, std::move(out), {an, sn}, std::move(back)));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Sum along the last axis of a rank-2 tensor: [k x d] -> [k x 1].
template <class S>
Tensor<S> row_sum(const Tensor<S>& a) {
    detail::require_rank2(a, "row_sum");
    const std::size_t r = a.shape()[0], d = a.shape()[1];
    std::vector<S> out(r, S(0));
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += av[i * d + j];
    auto an = a.node();
    auto back = [an, r, d](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) an->grad[i * d + j] += r_.grad[i];
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, 1}, std::move(out), {an}, std::move(back)));
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S acc = S(0);
    for (S v : a.value()) acc += v;
    auto an = a.node();
    auto back = [an](detail::TensorNode<S>& r) {
        detail::axpy<S>(std::span<const S>(an->value), *an, [&](std::size_t) { return r.grad[0]; });
    };
    return Tensor<S>::adopt(detail::make_result<S>({1}, {acc}, {an}, std::move(back)));
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a.size()));
}

/// Mean over rows of a[i, labels[i]]; backbone of the cross-entropy loss.
template <class S>
Tensor<S> select_labels_mean(const Tensor<S>& a, std::span<const std::uint32_t> labels) {
    detail::require_rank2(a, "select_labels_mean");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (labels.size() != r)
        throw ShapeError("select_labels_mean: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(r) + " rows");
    S acc = S(0);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        if (labels[i] >= c)
            throw ContractError("select_labels_mean: label " + std::to_string(labels[i]) +
                                " out of range for " + std::to_string(c) + " columns");
        acc += av[i * c + labels[i]];
    }
    acc /= static_cast<S>(r);
    auto an = a.node();
    std::vector<std::uint32_t> ls(labels.begin(), labels.end());
    auto back = [an, ls, r, c](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const S w = r_.grad[0] / static_cast<S>(r);
        for (std::size_t i = 0; i < r; ++i) an->grad[i * c + ls[i]] += w;
    };
    return Tensor<S>::adopt(detail::make_result<S>({1}, {acc}, {an}, std::move(back)));
}

// ---------------------------------------------------------------------------
// normalizations
// ---------------------------------------------------------------------------

/// Row-stochastic softmax with max subtraction; finite for any finite input.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
    detail::require_rank2(a, "softmax_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<S> out(r * c);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        S mx = av[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
        S z = S(0);
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(av[i * c + j] - mx);
            z += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
    }
    auto an = a.node();
    auto back = [an, r, c](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            S dot = S(0);
            for (std::size_t j = 0; j < c; ++j) dot += r_.grad[i * c + j] * r_.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                an->grad[i * c + j] += r_.value[i * c + j] * (r_.grad[i * c + j] - dot);
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, c}, std::move(out), {an}, std::move(back)));
}

/// Row-wise log-softmax, stabilized by max subtraction.
template <class S>
Tensor<S> log_softmax_rows(const Tensor<S>& a) {
    detail::require_rank2(a, "log_softmax_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<S> out(r * c);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        S mx = av[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
        S z = S(0);
        for (std::size_t j = 0; j < c; ++j) z += std::exp(av[i * c + j] - mx);
        const S lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] - lse;
    }
    auto an = a.node();
    auto back = [an, r, c](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            S gsum = S(0);
            for (std::size_t j = 0; j < c; ++j) gsum += r_.grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                an->grad[i * c + j] += r_.grad[i * c + j] - std::exp(r_.value[i * c + j]) * gsum;
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>({r, c}, std::move(out), {an}, std::move(back)));
}

/// Last-axis mean-0/var-1 normalization followed by an affine map.
/// Accepts rank-1 [d] or rank-2 [k x d]; gain and bias are rank-1 [d].
template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (a.rank() != 1 && a.rank() != 2)
        throw ShapeError("layer_norm: expected rank-1 or rank-2 input, got " + shape_str(a.shape()));
    const std::size_t d = a.shape()[a.rank() - 1];
    const std::size_t r = a.size() / d;
    if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d)
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match feature width " + std::to_string(d));
    std::vector<S> out(a.size());
    std::vector<S> xhat(a.size());
    std::vector<S> inv_std(r);
    auto av = a.value();
    auto gv = gain.value();
    auto bv = bias.value();
    for (std::size_t i = 0; i < r; ++i) {
        S mean = S(0);
        for (std::size_t j = 0; j < d; ++j) mean += av[i * d + j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            const S dv = av[i * d + j] - mean;
            var += dv * dv;
        }
        var /= static_cast<S>(d);
        const S istd = S(1) / std::sqrt(var + eps);
        inv_std[i] = istd;
        for (std::size_t j = 0; j < d; ++j) {
            const S xh = (av[i * d + j] - mean) * istd;
            xhat[i * d + j] = xh;
            out[i * d + j] = gv[j] * xh + bv[j];
        }
    }
    auto an = a.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto back = [an, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), r, d](detail::TensorNode<S>& r_) {
        for (std::size_t i = 0; i < r; ++i) {
            if (an->requires_grad) {
                an->ensure_grad();
                S m1 = S(0), m2 = S(0);
                for (std::size_t j = 0; j < d; ++j) {
                    const S gh = r_.grad[i * d + j] * gn->value[j];
                    m1 += gh;
                    m2 += gh * xhat[i * d + j];
                }
                m1 /= static_cast<S>(d);
                m2 /= static_cast<S>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const S gh = r_.grad[i * d + j] * gn->value[j];
                    an->grad[i * d + j] += inv_std[i] * (gh - m1 - xhat[i * d + j] * m2);
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gn->grad[j] += r_.grad[i * d + j] * xhat[i * d + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) bn->grad[j] += r_.grad[i * d + j];
            }
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an, gn, bn}, std::move(back)));
}

/// Norm floor below which a vector counts as a data bug rather than an input.
inline constexpr double kL2NormalizeMinNorm = 1e-12;

/// Scale every last-axis slice to unit Euclidean norm. Rank-1 or rank-2.
template <class S>
Tensor<S> l2_normalize(const Tensor<S>& a) {
    if (a.rank() != 1 && a.rank() != 2)
        throw ShapeError("l2_normalize: expected rank-1 or rank-2 input, got " + shape_str(a.shape()));
    const std::size_t d = a.shape()[a.rank() - 1];
    const std::size_t r = a.size() / d;
    std::vector<S> out(a.size());
    std::vector<S> inv_norm(r);
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        S sq = S(0);
        for (std::size_t j = 0; j < d; ++j) sq += av[i * d + j] * av[i * d + j];
        const S norm = std::sqrt(sq);
        if (!(norm > static_cast<S>(kL2NormalizeMinNorm)))
            throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has norm " +
                                       std::to_string(static_cast<double>(norm)));
        inv_norm[i] = S(1) / norm;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] * inv_norm[i];
    }
    auto an = a.node();
    auto back = [an, inv_norm = std::move(inv_norm), r, d](detail::TensorNode<S>& r_) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            S dot = S(0);
            for (std::size_t j = 0; j < d; ++j) dot += r_.grad[i * d + j] * r_.value[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                an->grad[i * d + j] += (r_.grad[i * d + j] - r_.value[i * d + j] * dot) * inv_norm[i];
        }
    };
    return Tensor<S>::adopt(detail::make_result<S>(a.shape(), std::move(out), {an}, std::move(back)));
}

/// Free-function form of the reverse sweep.
template <class S>
void backward(const Tensor<S>& loss) {
    loss.backward();
}

} // namespace lightcrl
