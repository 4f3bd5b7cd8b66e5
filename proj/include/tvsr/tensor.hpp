#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tvsr {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::vector<std::int64_t> row_major_strides(const Shape& shape) {
    std::vector<std::int64_t> strides(shape.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i)
        strides[i] = strides[i + 1] * shape[i + 1];
    return strides;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline void check_shape_valid(const Shape& shape, const char* who) {
    for (auto d : shape)
        if (d <= 0) throw std::invalid_argument(std::string(who) + ": non-positive extent in " + shape_str(shape));
}

// Values are checked for NaN/Inf after every public op while this is on.
// Training loops turn it off for speed and check the loss instead.
inline std::atomic<bool>& finite_check_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}

inline bool finite_checks_enabled() { return finite_check_flag().load(std::memory_order_relaxed); }
inline void set_finite_checks(bool on) { finite_check_flag().store(on, std::memory_order_relaxed); }

struct FiniteCheckGuard {
    bool previous;
    explicit FiniteCheckGuard(bool on) : previous(finite_checks_enabled()) { set_finite_checks(on); }
    ~FiniteCheckGuard() { set_finite_checks(previous); }
};

// Gradient recording is thread-local so inference workers can disable it
// independently.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    bool previous;
    NoGradGuard() : previous(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = previous; }
};

namespace detail {

template <typename S>
struct NodeT {
    Shape shape;
    std::shared_ptr<std::vector<S>> storage;  // shared so reshape is a metadata change
    std::vector<S> grad;                      // lazily sized to match storage
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward_fn;

    std::int64_t size() const { return static_cast<std::int64_t>(storage->size()); }
    std::vector<S>& values() { return *storage; }
    const std::vector<S>& values() const { return *storage; }

    void ensure_grad() {
        if (grad.size() != storage->size()) grad.assign(storage->size(), S(0));
    }
};

template <typename S>
void check_finite(const NodeT<S>& node, const char* what) {
    if (!finite_checks_enabled()) return;
    for (const S& v : node.values())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + node.op + "' (" + what + ")");
}

}  // namespace detail

template <typename S>
class TensorT {
public:
    using Node = detail::NodeT<S>;

    TensorT() = default;

    static TensorT from_data(Shape shape, std::vector<S> values, bool requires_grad = false) {
        check_shape_valid(shape, "Tensor");
        if (numel(shape) != static_cast<std::int64_t>(values.size()))
            throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->storage = std::make_shared<std::vector<S>>(std::move(values));
        t.node_->requires_grad = requires_grad;
        detail::check_finite(*t.node_, "leaf");
        return t;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        auto n = static_cast<std::size_t>(numel(shape));
        return from_data(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
    }

    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        auto n = static_cast<std::size_t>(numel(shape));
        return from_data(std::move(shape), std::vector<S>(n, value), requires_grad);
    }

    static TensorT scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t size() const { return node_->size(); }

    std::span<const S> data() const { return {node_->values().data(), node_->values().size()}; }
    // Mutation is only sound on leaves that are not part of a live graph
    // (parameter updates, test setup).
    std::span<S> mutable_data() { return {node_->values().data(), node_->values().size()}; }

    S item() const {
        if (size() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(size()) + " elements");
        return node_->values()[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const S> grad() const {
        if (node_->grad.empty()) throw std::runtime_error("grad(): no gradient has been computed");
        return {node_->grad.data(), node_->grad.size()};
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    // Same values, fresh leaf detached from any graph.
    TensorT detach() const { return from_data(shape(), node_->values(), false); }

    const char* op_name() const { return node_->op; }

    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }

    static TensorT wrap(std::shared_ptr<Node> node) {
        TensorT t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename S>
std::shared_ptr<NodeT<S>> make_result(Shape shape, std::vector<S> values, const char* op,
                                      std::vector<std::shared_ptr<NodeT<S>>> parents) {
    auto node = std::make_shared<NodeT<S>>();
    node->shape = std::move(shape);
    node->storage = std::make_shared<std::vector<S>>(std::move(values));
    node->op = op;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p->requires_grad) {
                node->requires_grad = true;
                break;
            }
        if (node->requires_grad) node->parents = std::move(parents);
    }
    return node;
}

// ---- batched matmul kernels (row-major, accumulate into C) ----
// Parallelism is over disjoint output rows, so results are bit-identical
// regardless of thread count.

// C(batch,m,n) += A(batch,m,k) * B(batch,k,n)
template <typename S>
void bmm_acc_nn(const S* a, const S* b, S* c, std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n) {
    const std::int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (rows * k * n > (1 << 16))
    for (std::int64_t row = 0; row < rows; ++row) {
        const std::int64_t t = row / m;
        const S* arow = a + row * k;
        const S* bmat = b + t * k * n;
        S* crow = c + row * n;
        for (std::int64_t p = 0; p < k; ++p) {
            S av = arow[p];
            const S* brow = bmat + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(batch,m,n) += A(batch,m,k) * B(batch,n,k)^T
template <typename S>
void bmm_acc_nt(const S* a, const S* b, S* c, std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n) {
    const std::int64_t rows = batch * m;
#pragma omp parallel for schedule(static) if (rows * k * n > (1 << 16))
    for (std::int64_t row = 0; row < rows; ++row) {
        const std::int64_t t = row / m;
        const S* arow = a + row * k;
        const S* bmat = b + t * n * k;
        S* crow = c + row * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const S* brow = bmat + j * k;
            S acc = S(0);
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C(batch,k,n) += A(batch,m,k)^T * B(batch,m,n)
template <typename S>
void bmm_acc_tn(const S* a, const S* b, S* c, std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n) {
    const std::int64_t rows = batch * k;
#pragma omp parallel for schedule(static) if (rows * m * n > (1 << 16))
    for (std::int64_t row = 0; row < rows; ++row) {
        const std::int64_t t = row / k;
        const std::int64_t p = row % k;
        const S* amat = a + t * m * k;
        const S* bmat = b + t * m * n;
        S* crow = c + row * n;
        for (std::int64_t i = 0; i < m; ++i) {
            S av = amat[i * k + p];
            const S* brow = bmat + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Decomposes iteration over `a` against a broadcast operand `b` into
// outer blocks x (repeat x inner) so the hot loops run without per-element
// index bookkeeping: trailing axes where b matches a form the contiguous
// `inner` run, the b==1 axes just above repeat it.
template <typename S, typename Fn>
void for_each_broadcast(const Shape& a, const Shape& b, Fn&& fn) {
    const std::int64_t rank = static_cast<std::int64_t>(a.size());
    std::int64_t k = rank - 1;
    std::int64_t inner = 1;
    while (k >= 0 && b[k] == a[k]) inner *= a[k--];
    std::int64_t repeat = 1;
    while (k >= 0 && b[k] == 1) repeat *= a[k--];

    std::vector<std::int64_t> extents(a.begin(), a.begin() + (k + 1));
    auto b_strides = row_major_strides(b);
    std::vector<std::int64_t> strides(static_cast<std::size_t>(k + 1));
    for (std::int64_t i = 0; i <= k; ++i) strides[i] = b[i] == 1 ? 0 : b_strides[i];

    std::int64_t blocks = 1;
    for (auto e : extents) blocks *= e;
    std::vector<std::int64_t> counter(extents.size(), 0);
    std::int64_t a_idx = 0;
    std::int64_t b_base = 0;
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        for (std::int64_t rep = 0; rep < repeat; ++rep)
            for (std::int64_t i = 0; i < inner; ++i, ++a_idx) fn(a_idx, b_base + i);
        for (std::int64_t axis = k; axis >= 0; --axis) {
            b_base += strides[axis];
            if (++counter[axis] < extents[axis]) break;
            b_base -= strides[axis] * extents[axis];
            counter[axis] = 0;
        }
    }
}

inline void require_broadcastable(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b) +
                                    " (no implicit rank promotion)");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (b[i] != a[i] && b[i] != 1)
            throw std::invalid_argument(std::string(op) + ": shape " + shape_str(b) +
                                        " not broadcastable to " + shape_str(a));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Binary op with "b broadcasts into a" semantics. DfA/DfB produce the local
// derivative factors given (a, b, y).
template <typename S, typename F, typename DfA, typename DfB>
TensorT<S> binary_op(const char* op, const TensorT<S>& a, const TensorT<S>& b, F f, DfA dfa, DfB dfb) {
    require_broadcastable(a.shape(), b.shape(), op);
    auto an = a.node();
    auto bn = b.node();
    const auto& av = an->values();
    const auto& bv = bn->values();
    std::vector<S> out(av.size());
    const bool same = a.shape() == b.shape();
    if (same) {
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
        for_each_broadcast<S>(a.shape(), b.shape(),
                              [&](std::int64_t ia, std::int64_t ib) { out[ia] = f(av[ia], bv[ib]); });
    }
    auto node = make_result<S>(a.shape(), std::move(out), op, {an, bn});
    check_finite(*node, "forward");
    if (node->requires_grad) {
        node->backward_fn = [an, bn, same, dfa, dfb](NodeT<S>& self) {
            const auto& av2 = an->values();
            const auto& bv2 = bn->values();
            const auto& yv = self.values();
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                if (same) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        an->grad[i] += g[i] * dfa(av2[i], bv2[i], yv[i]);
                } else {
                    for_each_broadcast<S>(self.shape, bn->shape, [&](std::int64_t ia, std::int64_t ib) {
                        an->grad[ia] += g[ia] * dfa(av2[ia], bv2[ib], yv[ia]);
                    });
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (same) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        bn->grad[i] += g[i] * dfb(av2[i], bv2[i], yv[i]);
                } else {
                    for_each_broadcast<S>(self.shape, bn->shape, [&](std::int64_t ia, std::int64_t ib) {
                        bn->grad[ib] += g[ia] * dfb(av2[ia], bv2[ib], yv[ia]);
                    });
                }
            }
        };
    }
    return TensorT<S>::wrap(node);
}

template <typename S, typename F, typename Df>
TensorT<S> unary_op(const char* op, const TensorT<S>& x, F f, Df df) {
    auto xn = x.node();
    const auto& xv = xn->values();
    const std::int64_t n = static_cast<std::int64_t>(xv.size());
    std::vector<S> out(xv.size());
#pragma omp parallel for schedule(static) if (n > (1 << 15))
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(xv[i]);
    auto node = make_result<S>(x.shape(), std::move(out), op, {xn});
    check_finite(*node, "forward");
    if (node->requires_grad) {
        node->backward_fn = [xn, df](NodeT<S>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const auto& xv2 = xn->values();
            const auto& yv = self.values();
            const std::int64_t n2 = static_cast<std::int64_t>(self.grad.size());
#pragma omp parallel for schedule(static) if (n2 > (1 << 15))
            for (std::int64_t i = 0; i < n2; ++i) xn->grad[i] += self.grad[i] * df(xv2[i], yv[i]);
        };
    }
    return TensorT<S>::wrap(node);
}

}  // namespace detail

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; }, [](S, S, S) { return S(1); }, [](S, S, S) { return S(1); });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; }, [](S, S, S) { return S(1); }, [](S, S, S) { return S(-1); });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y, S) { return y; }, [](S x, S, S) { return x; });
}

template <typename S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        "div", a, b, [](S x, S y) { return x / y; }, [](S, S y, S) { return S(1) / y; },
        [](S x, S y, S) { return -x / (y * y); });
}

template <typename S>
TensorT<S> scalar_mul(const TensorT<S>& x, S c) {
    return detail::unary_op<S>(
        "scalar_mul", x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
TensorT<S> scalar_add(const TensorT<S>& x, S c) {
    return detail::unary_op<S>(
        "scalar_add", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
TensorT<S> neg(const TensorT<S>& x) {
    return scalar_mul(x, S(-1));
}

template <typename S>
TensorT<S> abs(const TensorT<S>& x) {
    return detail::unary_op<S>(
        "abs", x, [](S v) { return std::fabs(v); },
        [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}

template <typename S>
TensorT<S> clamp_min(const TensorT<S>& x, S lo) {
    return detail::unary_op<S>(
        "clamp_min", x, [lo](S v) { return v < lo ? lo : v; }, [lo](S v, S) { return v > lo ? S(1) : S(0); });
}

template <typename S>
TensorT<S> clamp_max(const TensorT<S>& x, S hi) {
    return detail::unary_op<S>(
        "clamp_max", x, [hi](S v) { return v > hi ? hi : v; }, [hi](S v, S) { return v < hi ? S(1) : S(0); });
}

template <typename S>
TensorT<S> exp(const TensorT<S>& x) {
    return detail::unary_op<S>(
        "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
TensorT<S> log(const TensorT<S>& x) {
    return detail::unary_op<S>(
        "log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
TensorT<S> sqrt(const TensorT<S>& x) {
    return detail::unary_op<S>(
        "sqrt", x, [](S v) { return std::sqrt(v); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    return detail::unary_op<S>(
        "sigmoid", x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))). Math runs in the tensor's own
// precision.
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    constexpr S inv_sqrt2 = S(0.7071067811865475244);
    constexpr S inv_sqrt2pi = S(0.3989422804014326779);
    return detail::unary_op<S>(
        "gelu", x,
        [](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); },
        [](S v, S) {
            S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
            S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
            return cdf + v * pdf;
        });
}

// ---------------------------------------------------------------------------
// movement ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape new_shape) {
    check_shape_valid(new_shape, "reshape");
    if (numel(new_shape) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    auto xn = x.node();
    auto node = std::make_shared<detail::NodeT<S>>();
    node->shape = std::move(new_shape);
    node->storage = xn->storage;  // contiguous row-major, so reshape shares the buffer
    node->op = "reshape";
    if (grad_enabled() && xn->requires_grad) {
        node->requires_grad = true;
        node->parents = {xn};
        node->backward_fn = [xn](detail::NodeT<S>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        };
    }
    return TensorT<S>::wrap(node);
}

namespace detail {

template <typename S>
void permute_copy(const std::vector<S>& src, const Shape& src_shape, const std::vector<std::int64_t>& perm,
                  std::vector<S>& dst, bool accumulate) {
    const std::size_t r = src_shape.size();
    Shape dst_shape(r);
    for (std::size_t i = 0; i < r; ++i) dst_shape[i] = src_shape[perm[i]];
    auto src_strides = row_major_strides(src_shape);
    std::vector<std::int64_t> walk_strides(r);
    for (std::size_t i = 0; i < r; ++i) walk_strides[i] = src_strides[perm[i]];

    // a fixed innermost axis moves whole contiguous runs
    const std::int64_t inner =
        (perm[r - 1] == static_cast<std::int64_t>(r) - 1) ? src_shape[r - 1] : 1;
    const std::size_t walk_rank = inner > 1 ? r - 1 : r;

    std::vector<std::int64_t> counter(walk_rank, 0);
    std::int64_t offset = 0;
    const std::int64_t n = static_cast<std::int64_t>(src.size());
    for (std::int64_t i = 0; i < n; i += inner) {
        if (inner > 1) {
            if (accumulate)
                for (std::int64_t t = 0; t < inner; ++t) dst[i + t] += src[offset + t];
            else
                std::copy_n(src.begin() + offset, inner, dst.begin() + i);
        } else if (accumulate) {
            dst[i] += src[offset];
        } else {
            dst[i] = src[offset];
        }
        for (std::int64_t axis = static_cast<std::int64_t>(walk_rank) - 1; axis >= 0; --axis) {
            offset += walk_strides[axis];
            if (++counter[axis] < dst_shape[axis]) break;
            offset -= walk_strides[axis] * dst_shape[axis];
            counter[axis] = 0;
        }
    }
}

}  // namespace detail

template <typename S>
TensorT<S> permute(const TensorT<S>& x, std::vector<std::int64_t> axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw std::invalid_argument("permute: order has wrong length");
    std::vector<bool> seen(r, false);
    for (auto a : axes) {
        if (a < 0 || a >= static_cast<std::int64_t>(r) || seen[a])
            throw std::invalid_argument("permute: invalid axis order");
        seen[a] = true;
    }
    auto xn = x.node();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];
    std::vector<S> out(xn->values().size());
    detail::permute_copy(xn->values(), x.shape(), axes, out, false);
    auto node = detail::make_result<S>(std::move(out_shape), std::move(out), "permute", {xn});
    if (node->requires_grad) {
        std::vector<std::int64_t> inverse(r);
        for (std::size_t i = 0; i < r; ++i) inverse[axes[i]] = static_cast<std::int64_t>(i);
        node->backward_fn = [xn, inverse](detail::NodeT<S>& self) {
            xn->ensure_grad();
            detail::permute_copy(self.grad, self.shape, inverse, xn->grad, true);
        };
    }
    return TensorT<S>::wrap(node);
}

// Swap the last two axes (matmul helper).
template <typename S>
TensorT<S> transpose_last2(const TensorT<S>& x) {
    std::vector<std::int64_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

namespace detail {

// Visits an axis-aligned sub-box of a tensor as contiguous runs:
// fn(box_linear_index, outer_offset, run_length). Trailing axes that the box
// covers fully merge into one run together with the first partial axis.
template <typename Fn>
void for_each_box_run(const Shape& outer_shape, const std::vector<std::int64_t>& starts, const Shape& box_shape,
                      Fn&& fn) {
    const std::int64_t rank = static_cast<std::int64_t>(box_shape.size());
    auto outer_strides = row_major_strides(outer_shape);
    std::int64_t base = 0;
    for (std::int64_t i = 0; i < rank; ++i) base += starts[i] * outer_strides[i];

    std::int64_t k = rank - 1;
    std::int64_t run = 1;
    while (k >= 0 && box_shape[k] == outer_shape[k]) run *= box_shape[k--];
    if (k >= 0) run *= box_shape[k--];  // one partial axis stays contiguous

    std::vector<std::int64_t> counter(static_cast<std::size_t>(k + 1), 0);
    std::int64_t offset = base;
    const std::int64_t n = numel(box_shape);
    for (std::int64_t i = 0; i < n; i += run) {
        fn(i, offset, run);
        for (std::int64_t axis = k; axis >= 0; --axis) {
            offset += outer_strides[axis];
            if (++counter[axis] < box_shape[axis]) break;
            offset -= outer_strides[axis] * box_shape[axis];
            counter[axis] = 0;
        }
    }
}

// Per-element view of for_each_box_run.
template <typename Fn>
void for_each_box(const Shape& outer_shape, const std::vector<std::int64_t>& starts, const Shape& box_shape,
                  Fn&& fn) {
    for_each_box_run(outer_shape, starts, box_shape, [&](std::int64_t i, std::int64_t offset, std::int64_t run) {
        for (std::int64_t t = 0; t < run; ++t) fn(i + t, offset + t);
    });
}

}  // namespace detail

template <typename S>
TensorT<S> slice(const TensorT<S>& x, std::vector<std::int64_t> starts, Shape sizes) {
    if (starts.size() != x.rank() || sizes.size() != x.rank())
        throw std::invalid_argument("slice: starts/sizes must cover every axis");
    for (std::size_t i = 0; i < starts.size(); ++i)
        if (starts[i] < 0 || sizes[i] < 1 || starts[i] + sizes[i] > x.shape()[i])
            throw std::invalid_argument("slice: window out of bounds on axis " + std::to_string(i));
    auto xn = x.node();
    std::vector<S> out(static_cast<std::size_t>(numel(sizes)));
    detail::for_each_box_run(x.shape(), starts, sizes, [&](std::int64_t i, std::int64_t src, std::int64_t run) {
        std::copy_n(xn->values().begin() + src, run, out.begin() + i);
    });
    auto node = detail::make_result<S>(sizes, std::move(out), "slice", {xn});
    if (node->requires_grad) {
        Shape in_shape = x.shape();
        node->backward_fn = [xn, starts, in_shape](detail::NodeT<S>& self) {
            xn->ensure_grad();
            detail::for_each_box_run(in_shape, starts, self.shape,
                                     [&](std::int64_t i, std::int64_t dst, std::int64_t run) {
                                         for (std::int64_t t = 0; t < run; ++t)
                                             xn->grad[dst + t] += self.grad[i + t];
                                     });
        };
    }
    return TensorT<S>::wrap(node);
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& xs, std::int64_t axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const std::size_t r = xs[0].rank();
    if (axis < 0 || axis >= static_cast<std::int64_t>(r)) throw std::invalid_argument("concat: bad axis");
    Shape out_shape = xs[0].shape();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i].rank() != r) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t a = 0; a < r; ++a)
            if (a != static_cast<std::size_t>(axis) && xs[i].shape()[a] != out_shape[a])
                throw std::invalid_argument("concat: shape mismatch off the concat axis");
        out_shape[axis] += xs[i].shape()[axis];
    }
    std::vector<S> out(static_cast<std::size_t>(numel(out_shape)));
    std::vector<std::shared_ptr<detail::NodeT<S>>> parents;
    std::vector<std::int64_t> offsets;
    std::int64_t pos = 0;
    for (const auto& x : xs) {
        std::vector<std::int64_t> starts(r, 0);
        starts[axis] = pos;
        offsets.push_back(pos);
        auto xn = x.node();
        detail::for_each_box_run(out_shape, starts, x.shape(),
                                 [&](std::int64_t i, std::int64_t dst, std::int64_t run) {
                                     std::copy_n(xn->values().begin() + i, run, out.begin() + dst);
                                 });
        parents.push_back(xn);
        pos += x.shape()[axis];
    }
    auto node = detail::make_result<S>(out_shape, std::move(out), "concat", parents);
    if (node->requires_grad) {
        std::vector<Shape> in_shapes;
        for (const auto& x : xs) in_shapes.push_back(x.shape());
        auto all_parents = node->parents;
        node->backward_fn = [all_parents, in_shapes, offsets, axis, r](detail::NodeT<S>& self) {
            for (std::size_t p = 0; p < all_parents.size(); ++p) {
                auto& parent = all_parents[p];
                if (!parent->requires_grad) continue;
                parent->ensure_grad();
                std::vector<std::int64_t> starts(r, 0);
                starts[axis] = offsets[p];
                detail::for_each_box_run(self.shape, starts, in_shapes[p],
                                         [&](std::int64_t i, std::int64_t src, std::int64_t run) {
                                             for (std::int64_t t = 0; t < run; ++t)
                                                 parent->grad[i + t] += self.grad[src + t];
                                         });
            }
        };
    }
    return TensorT<S>::wrap(node);
}

template <typename S>
TensorT<S> flip(const TensorT<S>& x, std::int64_t axis) {
    if (axis < 0 || axis >= static_cast<std::int64_t>(x.rank())) throw std::invalid_argument("flip: bad axis");
    auto xn = x.node();
    auto strides = row_major_strides(x.shape());
    const std::int64_t extent = x.shape()[axis];
    const std::int64_t stride = strides[axis];
    const auto& src = xn->values();
    std::vector<S> out(src.size());
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t coord = (i / stride) % extent;
        std::int64_t mirrored = i + (extent - 1 - 2 * coord) * stride;
        out[mirrored] = src[i];
    }
    auto node = detail::make_result<S>(x.shape(), std::move(out), "flip", {xn});
    if (node->requires_grad) {
        node->backward_fn = [xn, stride, extent](detail::NodeT<S>& self) {
            xn->ensure_grad();
            const std::int64_t n2 = static_cast<std::int64_t>(self.grad.size());
            for (std::int64_t i = 0; i < n2; ++i) {
                std::int64_t coord = (i / stride) % extent;
                std::int64_t mirrored = i + (extent - 1 - 2 * coord) * stride;
                xn->grad[i] += self.grad[mirrored];
            }
        };
    }
    return TensorT<S>::wrap(node);
}

// Pad one axis by replicating the edge entries.
template <typename S>
TensorT<S> pad_edge(const TensorT<S>& x, std::int64_t axis, std::int64_t before, std::int64_t after) {
    if (axis < 0 || axis >= static_cast<std::int64_t>(x.rank())) throw std::invalid_argument("pad_edge: bad axis");
    if (before < 0 || after < 0) throw std::invalid_argument("pad_edge: negative pad");
    if (before == 0 && after == 0) return x;
    auto xn = x.node();
    Shape out_shape = x.shape();
    out_shape[axis] += before + after;
    const std::int64_t in_extent = x.shape()[axis];
    auto out_strides = row_major_strides(out_shape);
    auto in_strides = row_major_strides(x.shape());
    const std::int64_t stride = out_strides[axis];
    const std::int64_t in_stride = in_strides[axis];
    std::vector<S> out(static_cast<std::size_t>(numel(out_shape)));
    const std::int64_t n = numel(out_shape);
    const auto& src = xn->values();
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t coord = (i / stride) % out_shape[axis];
        std::int64_t src_coord = std::clamp<std::int64_t>(coord - before, 0, in_extent - 1);
        std::int64_t base = i - coord * stride;
        // map position off the padded axis back into input offsets
        std::int64_t lo = base % stride;
        std::int64_t hi = base / (stride * out_shape[axis]);
        out[i] = src[hi * in_stride * in_extent + src_coord * in_stride + lo];
    }
    auto node = detail::make_result<S>(out_shape, std::move(out), "pad_edge", {xn});
    if (node->requires_grad) {
        const std::int64_t out_extent = out_shape[axis];
        node->backward_fn = [xn, stride, in_stride, before, in_extent, out_extent](detail::NodeT<S>& self) {
            xn->ensure_grad();
            const std::int64_t n2 = static_cast<std::int64_t>(self.grad.size());
            for (std::int64_t i = 0; i < n2; ++i) {
                std::int64_t coord = (i / stride) % out_extent;
                std::int64_t src_coord = std::clamp<std::int64_t>(coord - before, 0, in_extent - 1);
                std::int64_t base = i - coord * stride;
                std::int64_t lo = base % stride;
                std::int64_t hi = base / (stride * out_extent);
                xn->grad[hi * in_stride * in_extent + src_coord * in_stride + lo] += self.grad[i];
            }
        };
    }
    return TensorT<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// reductions and softmax
// ---------------------------------------------------------------------------

namespace detail {

inline Shape reduced_shape(const Shape& in, const std::vector<std::int64_t>& axes, bool keepdim) {
    std::vector<bool> drop(in.size(), false);
    for (auto a : axes) drop[a] = true;
    Shape out;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (drop[i]) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(in[i]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}

inline void validate_axes(const Shape& shape, std::vector<std::int64_t>& axes, const char* op) {
    if (axes.empty()) throw std::invalid_argument(std::string(op) + ": empty axis set");
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] < 0 || axes[i] >= static_cast<std::int64_t>(shape.size()))
            throw std::invalid_argument(std::string(op) + ": axis out of range");
        if (i && axes[i] == axes[i - 1]) throw std::invalid_argument(std::string(op) + ": duplicate axis");
    }
}

// Maps every input linear index to the linear index of the cell it reduces into.
struct ReduceMap {
    std::vector<std::int64_t> in_extents;
    std::vector<std::int64_t> out_strides;  // 0 on reduced axes

    ReduceMap(const Shape& in_shape, const std::vector<std::int64_t>& axes) {
        std::vector<bool> reduced(in_shape.size(), false);
        for (auto a : axes) reduced[a] = true;
        Shape kept = in_shape;
        for (std::size_t i = 0; i < kept.size(); ++i)
            if (reduced[i]) kept[i] = 1;
        auto strides = row_major_strides(kept);
        in_extents.assign(in_shape.begin(), in_shape.end());
        out_strides.resize(in_shape.size());
        for (std::size_t i = 0; i < in_shape.size(); ++i) out_strides[i] = reduced[i] ? 0 : strides[i];
    }

    template <typename Fn>
    void for_each(const Shape& in_shape, Fn&& fn) const {
        std::vector<std::int64_t> counter(in_shape.size(), 0);
        std::int64_t out_off = 0;
        std::int64_t n = numel(in_shape);
        for (std::int64_t i = 0; i < n; ++i) {
            fn(i, out_off);
            for (std::int64_t axis = static_cast<std::int64_t>(in_shape.size()) - 1; axis >= 0; --axis) {
                out_off += out_strides[axis];
                if (++counter[axis] < in_extents[axis]) break;
                out_off -= out_strides[axis] * in_extents[axis];
                counter[axis] = 0;
            }
        }
    }
};

}  // namespace detail

namespace detail {

// True when `axes` are exactly the trailing axes of `shape`.
inline bool is_trailing_reduction(const Shape& shape, const std::vector<std::int64_t>& axes) {
    const std::int64_t rank = static_cast<std::int64_t>(shape.size());
    const std::int64_t t = static_cast<std::int64_t>(axes.size());
    for (std::int64_t i = 0; i < t; ++i)
        if (axes[i] != rank - t + i) return false;
    return true;
}

}  // namespace detail

template <typename S>
TensorT<S> sum(const TensorT<S>& x, std::vector<std::int64_t> axes, bool keepdim = false) {
    detail::validate_axes(x.shape(), axes, "sum");
    auto xn = x.node();
    Shape out_shape = detail::reduced_shape(x.shape(), axes, keepdim);
    std::vector<S> out(static_cast<std::size_t>(numel(out_shape)), S(0));
    const bool trailing = detail::is_trailing_reduction(x.shape(), axes);
    if (trailing) {
        const std::int64_t rows = numel(out_shape);
        const std::int64_t inner = x.size() / rows;
        const S* src = xn->values().data();
        for (std::int64_t row = 0; row < rows; ++row) {
            S acc = S(0);
            for (std::int64_t i = 0; i < inner; ++i) acc += src[row * inner + i];
            out[row] = acc;
        }
    } else {
        detail::ReduceMap map(x.shape(), axes);
        map.for_each(x.shape(), [&](std::int64_t i, std::int64_t o) { out[o] += xn->values()[i]; });
    }
    auto node = detail::make_result<S>(out_shape, std::move(out), "sum", {xn});
    detail::check_finite(*node, "forward");
    if (node->requires_grad) {
        Shape in_shape = x.shape();
        node->backward_fn = [xn, in_shape, axes, trailing](detail::NodeT<S>& self) {
            xn->ensure_grad();
            if (trailing) {
                const std::int64_t rows = static_cast<std::int64_t>(self.grad.size());
                const std::int64_t inner = static_cast<std::int64_t>(xn->grad.size()) / rows;
                for (std::int64_t row = 0; row < rows; ++row) {
                    const S g = self.grad[row];
                    S* dst = xn->grad.data() + row * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += g;
                }
            } else {
                detail::ReduceMap map2(in_shape, axes);
                map2.for_each(in_shape, [&](std::int64_t i, std::int64_t o) { xn->grad[i] += self.grad[o]; });
            }
        };
    }
    return TensorT<S>::wrap(node);
}

template <typename S>
TensorT<S> mean(const TensorT<S>& x, std::vector<std::int64_t> axes, bool keepdim = false) {
    detail::validate_axes(x.shape(), axes, "mean");
    std::int64_t count = 1;
    for (auto a : axes) count *= x.shape()[a];
    return scalar_mul(sum(x, axes, keepdim), S(1) / S(count));
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    std::vector<std::int64_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return mean(x, axes, false);
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    std::vector<std::int64_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return sum(x, axes, false);
}

// Max along one axis. Gradient routes to the first maximal entry.
template <typename S>
TensorT<S> reduce_max(const TensorT<S>& x, std::int64_t axis, bool keepdim = false) {
    std::vector<std::int64_t> axes{axis};
    detail::validate_axes(x.shape(), axes, "max");
    auto xn = x.node();
    Shape out_shape = detail::reduced_shape(x.shape(), axes, keepdim);
    std::int64_t out_n = numel(out_shape);
    std::vector<S> out(static_cast<std::size_t>(out_n), std::numeric_limits<S>::lowest());
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out_n), -1);
    detail::ReduceMap map(x.shape(), axes);
    map.for_each(x.shape(), [&](std::int64_t i, std::int64_t o) {
        if ((*argmax)[o] < 0 || xn->values()[i] > out[o]) {
            out[o] = xn->values()[i];
            (*argmax)[o] = i;
        }
    });
    auto node = detail::make_result<S>(out_shape, std::move(out), "max", {xn});
    if (node->requires_grad) {
        node->backward_fn = [xn, argmax](detail::NodeT<S>& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < self.grad.size(); ++o) xn->grad[(*argmax)[o]] += self.grad[o];
        };
    }
    return TensorT<S>::wrap(node);
}

// L2 norm along one axis. Gradient is x / max(norm, guard) so zero rows do
// not poison the backward pass.
template <typename S>
TensorT<S> l2_norm(const TensorT<S>& x, std::int64_t axis, bool keepdim = false) {
    std::vector<std::int64_t> axes{axis};
    detail::validate_axes(x.shape(), axes, "l2_norm");
    auto xn = x.node();
    Shape out_shape = detail::reduced_shape(x.shape(), axes, keepdim);
    std::vector<S> out(static_cast<std::size_t>(numel(out_shape)), S(0));
    const bool trailing = detail::is_trailing_reduction(x.shape(), axes);
    if (trailing) {
        const std::int64_t rows = numel(out_shape);
        const std::int64_t inner = x.size() / rows;
        const S* src = xn->values().data();
        for (std::int64_t row = 0; row < rows; ++row) {
            S acc = S(0);
            for (std::int64_t i = 0; i < inner; ++i) acc += src[row * inner + i] * src[row * inner + i];
            out[row] = std::sqrt(acc);
        }
    } else {
        detail::ReduceMap map(x.shape(), axes);
        map.for_each(x.shape(), [&](std::int64_t i, std::int64_t o) {
            out[o] += xn->values()[i] * xn->values()[i];
        });
        for (auto& v : out) v = std::sqrt(v);
    }
    auto node = detail::make_result<S>(out_shape, std::move(out), "l2_norm", {xn});
    detail::check_finite(*node, "forward");
    if (node->requires_grad) {
        Shape in_shape = x.shape();
        node->backward_fn = [xn, in_shape, axes, trailing](detail::NodeT<S>& self) {
            constexpr S guard = S(1e-12);
            xn->ensure_grad();
            if (trailing) {
                const std::int64_t rows = static_cast<std::int64_t>(self.grad.size());
                const std::int64_t inner = static_cast<std::int64_t>(xn->grad.size()) / rows;
                for (std::int64_t row = 0; row < rows; ++row) {
                    const S scale = self.grad[row] / std::max(self.values()[row], guard);
                    const S* xr = xn->values().data() + row * inner;
                    S* dst = xn->grad.data() + row * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += scale * xr[i];
                }
            } else {
                detail::ReduceMap map2(in_shape, axes);
                map2.for_each(in_shape, [&](std::int64_t i, std::int64_t o) {
                    S denom = std::max(self.values()[o], guard);
                    xn->grad[i] += self.grad[o] * xn->values()[i] / denom;
                });
            }
        };
    }
    return TensorT<S>::wrap(node);
}

template <typename S>
TensorT<S> softmax(const TensorT<S>& x, std::int64_t axis) {
    if (axis < 0 || axis >= static_cast<std::int64_t>(x.rank()))
        throw std::invalid_argument("softmax: bad axis");
    auto xn = x.node();
    auto strides = row_major_strides(x.shape());
    const std::int64_t extent = x.shape()[axis];
    const std::int64_t stride = strides[axis];
    const std::int64_t n = x.size();
    const std::int64_t rows = n / extent;
    const auto& src = xn->values();
    std::vector<S> out(src.size());
    for (std::int64_t row = 0; row < rows; ++row) {
        // base offset of this row: split linear index around the softmax axis
        std::int64_t hi = row / stride;
        std::int64_t lo = row % stride;
        std::int64_t base = hi * stride * extent + lo;
        S max_v = src[base];
        for (std::int64_t t = 1; t < extent; ++t) max_v = std::max(max_v, src[base + t * stride]);
        S total = S(0);
        for (std::int64_t t = 0; t < extent; ++t) {
            S e = std::exp(src[base + t * stride] - max_v);
            out[base + t * stride] = e;
            total += e;
        }
        for (std::int64_t t = 0; t < extent; ++t) out[base + t * stride] /= total;
    }
    auto node = detail::make_result<S>(x.shape(), std::move(out), "softmax", {xn});
    detail::check_finite(*node, "forward");
    if (node->requires_grad) {
        node->backward_fn = [xn, stride, extent](detail::NodeT<S>& self) {
            xn->ensure_grad();
            const auto& y = self.values();
            const auto& g = self.grad;
            const std::int64_t rows2 = static_cast<std::int64_t>(y.size()) / extent;
            for (std::int64_t row = 0; row < rows2; ++row) {
                std::int64_t hi = row / stride;
                std::int64_t lo = row % stride;
                std::int64_t base = hi * stride * extent + lo;
                S dot = S(0);
                for (std::int64_t t = 0; t < extent; ++t) dot += g[base + t * stride] * y[base + t * stride];
                for (std::int64_t t = 0; t < extent; ++t) {
                    std::int64_t idx = base + t * stride;
                    xn->grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
        };
    }
    return TensorT<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul: operands must have rank >= 2");
    if (a.rank() != b.rank()) throw std::invalid_argument("matmul: rank mismatch");
    const std::size_t r = a.rank();
    const std::int64_t m = a.shape()[r - 2];
    const std::int64_t k = a.shape()[r - 1];
    const std::int64_t k2 = b.shape()[r - 2];
    const std::int64_t n = b.shape()[r - 1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    std::int64_t batch = 1;
    Shape out_shape;
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (a.shape()[i] != b.shape()[i]) throw std::invalid_argument("matmul: batch extents differ");
        batch *= a.shape()[i];
        out_shape.push_back(a.shape()[i]);
    }
    out_shape.push_back(m);
    out_shape.push_back(n);

    auto an = a.node();
    auto bn = b.node();
    std::vector<S> out(static_cast<std::size_t>(batch * m * n), S(0));
    detail::bmm_acc_nn(an->values().data(), bn->values().data(), out.data(), batch, m, k, n);

    auto node = detail::make_result<S>(std::move(out_shape), std::move(out), "matmul", {an, bn});
    detail::check_finite(*node, "forward");
    if (node->requires_grad) {
        node->backward_fn = [an, bn, batch, m, k, n](detail::NodeT<S>& self) {
            const S* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = G * B^T
                detail::bmm_acc_nt(g, bn->values().data(), an->grad.data(), batch, m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * G
                detail::bmm_acc_tn(an->values().data(), g, bn->grad.data(), batch, m, k, n);
            }
        };
    }
    return TensorT<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

template <typename S>
void TensorT<S>::backward() const {
    if (size() != 1) throw std::invalid_argument("backward(): root must be a scalar");
    if (!node_->requires_grad) throw std::invalid_argument("backward(): root does not require grad");

    // reverse topological order via iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_fn) continue;
        node->ensure_grad();
        node->backward_fn(*node);
    }
    if (finite_checks_enabled()) {
        for (Node* node : order)
            for (const S& v : node->grad)
                if (!std::isfinite(v))
                    throw std::runtime_error(std::string("non-finite gradient at op '") + node->op + "'");
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
struct AdamStateT {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
};

using AdamState = AdamStateT<float>;

// One Adam update with bias correction over an ordered parameter list.
// Parameters without an accumulated gradient are treated as zero-gradient.
template <typename S>
void adam_step(std::vector<TensorT<S>>& params, AdamStateT<S>& state) {
    if (state.lr < 0) throw std::invalid_argument("adam_step: lr must be nonnegative");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<std::size_t>(params[i].size()), S(0));
            state.v[i].assign(static_cast<std::size_t>(params[i].size()), S(0));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (state.m[i].size() != static_cast<std::size_t>(p.size()))
            throw std::invalid_argument("adam_step: moment shape mismatch at index " + std::to_string(i));
        auto pd = p.mutable_data();
        auto node = p.node();
        const bool has_g = !node->grad.empty();
        for (std::size_t j = 0; j < pd.size(); ++j) {
            double g = has_g ? static_cast<double>(node->grad[j]) : 0.0;
            double mj = state.beta1 * static_cast<double>(state.m[i][j]) + (1.0 - state.beta1) * g;
            double vj = state.beta2 * static_cast<double>(state.v[i][j]) + (1.0 - state.beta2) * g * g;
            state.m[i][j] = static_cast<S>(mj);
            state.v[i][j] = static_cast<S>(vj);
            double mhat = mj / bc1;
            double vhat = vj / bc2;
            pd[j] = static_cast<S>(static_cast<double>(pd[j]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Central-difference check of d fn / d inputs over every coordinate of every
// input. fn must return a scalar tensor. Returns the worst relative error,
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
template <typename S>
double grad_check(const std::function<TensorT<S>(std::vector<TensorT<S>>&)>& fn, std::vector<TensorT<S>> inputs,
                  double epsilon, double floor = 1e-6) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    TensorT<S> out = fn(inputs);
    if (out.size() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
    out.backward();
    std::vector<std::vector<S>> analytic;
    for (auto& in : inputs) {
        in.node()->ensure_grad();
        analytic.emplace_back(in.node()->grad.begin(), in.node()->grad.end());
    }
    double worst = 0.0;
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto vals = inputs[t].mutable_data();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const S saved = vals[j];
            vals[j] = saved + static_cast<S>(epsilon);
            double up = static_cast<double>(fn(inputs).item());
            vals[j] = saved - static_cast<S>(epsilon);
            double down = static_cast<double>(fn(inputs).item());
            vals[j] = saved;
            double numeric = (up - down) / (2.0 * epsilon);
            double ana = static_cast<double>(analytic[t][j]);
            double err = std::fabs(ana - numeric) / std::max({std::fabs(ana), std::fabs(numeric), floor});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace tvsr
