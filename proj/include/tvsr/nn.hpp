#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tvsr/rng.hpp"
#include "tvsr/tensor.hpp"

namespace tvsr {

// Ordered, uniquely named parameter set. Order defines checkpoint layout and
// the Adam state layout.
template <typename S>
class ParamStore {
public:
    TensorT<S>& add(const std::string& name, TensorT<S> t) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    const TensorT<S>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &items_[it->second].second;
    }

    TensorT<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &items_[it->second].second;
    }

    const std::vector<std::pair<std::string, TensorT<S>>>& items() const { return items_; }

    std::vector<TensorT<S>> tensors() const {
        std::vector<TensorT<S>> out;
        out.reserve(items_.size());
        for (const auto& [name, t] : items_) out.push_back(t);
        return out;
    }

    std::size_t size() const { return items_.size(); }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, TensorT<S>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// parameter initialization
// ---------------------------------------------------------------------------

template <typename S>
void fill_trunc_normal(TensorT<S>& t, Rng& rng, double stddev) {
    for (auto& v : t.mutable_data()) v = static_cast<S>(rng.trunc_normal(stddev));
}

template <typename S>
void fill_constant(TensorT<S>& t, S value) {
    for (auto& v : t.mutable_data()) v = value;
}

template <typename S>
void fill_uniform(TensorT<S>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(lo, hi));
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename S>
struct LinearT {
    TensorT<S> weight;  // [out, in]
    TensorT<S> bias;    // [out]
};

using Linear = LinearT<float>;

template <typename S>
LinearT<S> make_linear(ParamStore<S>& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                       bool zero_init = false) {
    LinearT<S> layer;
    auto w = TensorT<S>::zeros({out, in});
    if (!zero_init) fill_trunc_normal(w, rng, 0.02);
    layer.weight = store.add(name + ".weight", std::move(w));
    layer.bias = store.add(name + ".bias", TensorT<S>::zeros({out}));
    return layer;
}

// y = x W^T + b over the trailing axis.
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const LinearT<S>& layer) {
    const std::int64_t in = layer.weight.shape()[1];
    const std::int64_t out = layer.weight.shape()[0];
    if (x.shape().back() != in)
        throw std::invalid_argument("linear: trailing extent " + std::to_string(x.shape().back()) +
                                    " does not match weight input " + std::to_string(in));
    const std::int64_t rows = x.size() / in;
    auto x2 = reshape(x, {rows, in});
    auto y2 = matmul(x2, transpose_last2(layer.weight));
    y2 = add(y2, reshape(layer.bias, {1, out}));
    Shape out_shape = x.shape();
    out_shape.back() = out;
    return reshape(y2, out_shape);
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

template <typename S>
struct LayerNormParamsT {
    TensorT<S> gain;    // [dim]
    TensorT<S> offset;  // [dim]
    double epsilon = 1e-5;
};

using LayerNormParams = LayerNormParamsT<float>;

template <typename S>
LayerNormParamsT<S> make_layer_norm(ParamStore<S>& store, const std::string& name, std::int64_t dim,
                                    double epsilon = 1e-5) {
    if (epsilon <= 0) throw std::invalid_argument("layer_norm: epsilon must be positive");
    LayerNormParamsT<S> p;
    p.gain = store.add(name + ".gain", TensorT<S>::full({dim}, S(1)));
    p.offset = store.add(name + ".offset", TensorT<S>::zeros({dim}));
    p.epsilon = epsilon;
    return p;
}

// Normalizes along the trailing axis (biased variance, epsilon floor), then
// applies gain/offset. Single fused op with a closed-form backward.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const LayerNormParamsT<S>& params) {
    const std::int64_t dim = x.shape().back();
    if (params.gain.size() != dim)
        throw std::invalid_argument("layer_norm: gain width does not match the trailing axis");
    auto xn = x.node();
    auto gn = params.gain.node();
    auto on = params.offset.node();
    const std::int64_t rows = x.size() / dim;
    const auto& xv = xn->values();
    const auto& gain = gn->values();
    const auto& offset = on->values();
    const S eps = S(params.epsilon);

    auto normalized = std::make_shared<std::vector<S>>(xv.size());
    auto inv_sigma = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
    std::vector<S> out(xv.size());
    for (std::int64_t row = 0; row < rows; ++row) {
        const S* xr = xv.data() + row * dim;
        S mu = S(0);
        for (std::int64_t j = 0; j < dim; ++j) mu += xr[j];
        mu /= S(dim);
        S var = S(0);
        for (std::int64_t j = 0; j < dim; ++j) {
            S d = xr[j] - mu;
            var += d * d;
        }
        var /= S(dim);
        const S isig = S(1) / std::sqrt(var + eps);
        (*inv_sigma)[row] = isig;
        S* nr = normalized->data() + row * dim;
        S* yr = out.data() + row * dim;
        for (std::int64_t j = 0; j < dim; ++j) {
            nr[j] = (xr[j] - mu) * isig;
            yr[j] = gain[j] * nr[j] + offset[j];
        }
    }

    auto node = detail::make_result<S>(x.shape(), std::move(out), "layer_norm", {xn, gn, on});
    detail::check_finite(*node, "forward");
    if (node->requires_grad) {
        node->backward_fn = [xn, gn, on, normalized, inv_sigma, rows, dim](detail::NodeT<S>& self) {
            const auto& g = self.grad;
            const auto& gain = gn->values();
            if (gn->requires_grad) gn->ensure_grad();
            if (on->requires_grad) on->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (std::int64_t row = 0; row < rows; ++row) {
                const S* gr = g.data() + row * dim;
                const S* nr = normalized->data() + row * dim;
                if (gn->requires_grad || on->requires_grad) {
                    for (std::int64_t j = 0; j < dim; ++j) {
                        if (gn->requires_grad) gn->grad[j] += gr[j] * nr[j];
                        if (on->requires_grad) on->grad[j] += gr[j];
                    }
                }
                if (xn->requires_grad) {
                    S mean_h = S(0), mean_hn = S(0);
                    for (std::int64_t j = 0; j < dim; ++j) {
                        const S h = gr[j] * gain[j];
                        mean_h += h;
                        mean_hn += h * nr[j];
                    }
                    mean_h /= S(dim);
                    mean_hn /= S(dim);
                    const S isig = (*inv_sigma)[row];
                    S* dx = xn->grad.data() + row * dim;
                    for (std::int64_t j = 0; j < dim; ++j)
                        dx[j] += isig * (gr[j] * gain[j] - mean_h - nr[j] * mean_hn);
                }
            }
        };
    }
    return TensorT<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

struct WindowSpec {
    std::int64_t window = 8;
    std::int64_t shift = 0;  // 0 or window / 2

    void validate() const {
        if (window < 1) throw std::invalid_argument("WindowSpec: window must be >= 1");
        if (shift < 0 || shift >= window) throw std::invalid_argument("WindowSpec: require 0 <= shift < window");
    }
};

// Clip the window to the sequence length; shifting is pointless once a single
// window covers the whole sequence.
inline WindowSpec resolve_window(WindowSpec spec, std::int64_t length) {
    spec.validate();
    if (spec.window >= length) return {length, 0};
    return spec;
}

template <typename S>
struct WindowPartitionT {
    TensorT<S> windows;  // [B * nw, w, d]
    std::int64_t batch = 0;
    std::int64_t length = 0;  // unpadded sequence length
    std::int64_t padded = 0;
    WindowSpec spec;
};

template <typename S>
TensorT<S> roll_axis1(const TensorT<S>& x, std::int64_t amount) {
    const std::int64_t len = x.shape()[1];
    amount = ((amount % len) + len) % len;
    if (amount == 0) return x;
    auto head = slice(x, {0, 0, 0}, {x.shape()[0], amount, x.shape()[2]});
    auto tail = slice(x, {0, amount, 0}, {x.shape()[0], len - amount, x.shape()[2]});
    return concat<S>({tail, head}, 1);
}

// Pads L to a multiple of the window by edge replication, applies the cyclic
// shift, and splits into windows.
template <typename S>
WindowPartitionT<S> window_partition(const TensorT<S>& x, WindowSpec spec) {
    spec.validate();
    if (x.rank() != 3) throw std::invalid_argument("window_partition: expected [B, L, d]");
    const std::int64_t b = x.shape()[0];
    const std::int64_t len = x.shape()[1];
    const std::int64_t d = x.shape()[2];
    const std::int64_t w = spec.window;
    const std::int64_t padded = (len + w - 1) / w * w;
    TensorT<S> y = x;
    if (padded != len) y = pad_edge(y, 1, 0, padded - len);
    if (spec.shift > 0) y = roll_axis1(y, spec.shift);
    WindowPartitionT<S> part;
    part.windows = reshape(y, {b * (padded / w), w, d});
    part.batch = b;
    part.length = len;
    part.padded = padded;
    part.spec = spec;
    return part;
}

template <typename S>
TensorT<S> window_reverse(const TensorT<S>& windows, const WindowPartitionT<S>& part) {
    const std::int64_t d = windows.shape()[2];
    auto y = reshape(windows, {part.batch, part.padded, d});
    if (part.spec.shift > 0) y = roll_axis1(y, -part.spec.shift);
    if (part.padded != part.length) y = slice(y, {0, 0, 0}, {part.batch, part.length, d});
    return y;
}

// Additive attention mask for shifted windows: token pairs that were not
// neighbors before the cyclic shift must not attend to each other.
// Returns row-major [nw, w, w] with 0 or -1e4 entries, or empty when no mask
// is needed.
template <typename S>
std::vector<S> shift_attention_mask(std::int64_t padded, std::int64_t window, std::int64_t shift) {
    if (shift == 0) return {};
    const std::int64_t nw = padded / window;
    // segment by post-shift position: only the last window mixes the rolled
    // tail with the wrapped head
    auto segment = [&](std::int64_t pos) {
        if (pos < padded - window) return 0;
        if (pos < padded - shift) return 1;
        return 2;
    };
    std::vector<S> mask(static_cast<std::size_t>(nw * window * window), S(0));
    for (std::int64_t win = 0; win < nw; ++win)
        for (std::int64_t i = 0; i < window; ++i)
            for (std::int64_t j = 0; j < window; ++j)
                if (segment(win * window + i) != segment(win * window + j))
                    mask[(win * window + i) * window + j] = S(-1e4);
    return mask;
}

// ---------------------------------------------------------------------------
// depth subpixel rearrangement
// ---------------------------------------------------------------------------

// [B, D, H, W, r*c] -> [B, r*D, H, W, c]; channel group p of slice d becomes
// output slice r*d + p.
template <typename S>
TensorT<S> depth_subpixel(const TensorT<S>& x, std::int64_t r) {
    if (x.rank() != 5) throw std::invalid_argument("depth_subpixel: expected [B, D, H, W, C]");
    if (r < 1) throw std::invalid_argument("depth_subpixel: r must be >= 1");
    const auto& s = x.shape();
    if (s[4] % r != 0)
        throw std::invalid_argument("depth_subpixel: channels " + std::to_string(s[4]) +
                                    " not divisible by r=" + std::to_string(r));
    if (r == 1) return x;
    const std::int64_t c = s[4] / r;
    auto y = reshape(x, {s[0], s[1], s[2], s[3], r, c});
    y = permute(y, {0, 1, 4, 2, 3, 5});
    return reshape(y, {s[0], s[1] * r, s[2], s[3], c});
}

// Exact inverse of depth_subpixel.
template <typename S>
TensorT<S> depth_subpixel_inverse(const TensorT<S>& x, std::int64_t r) {
    if (x.rank() != 5) throw std::invalid_argument("depth_subpixel_inverse: expected [B, D, H, W, C]");
    const auto& s = x.shape();
    if (s[1] % r != 0) throw std::invalid_argument("depth_subpixel_inverse: depth not divisible by r");
    if (r == 1) return x;
    auto y = reshape(x, {s[0], s[1] / r, r, s[2], s[3], s[4]});
    y = permute(y, {0, 1, 3, 4, 2, 5});
    return reshape(y, {s[0], s[1] / r, s[2], s[3], s[4] * r});
}

}  // namespace tvsr
