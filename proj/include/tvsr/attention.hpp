#pragma once
#include <type_traits>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tvsr/nn.hpp"
#include "tvsr/tensor.hpp"

namespace tvsr {

// Scaled cosine attention with a continuous MLP-generated positional bias
// (Swin V2 style). tau is stored in log space per head; the effective
// temperature is clamped below at tau_min.
template <typename S>
struct CosineAttentionParamsT {
    std::int64_t heads = 0;
    LinearT<S> qkv;        // d -> 3d
    LinearT<S> proj;       // d -> d
    TensorT<S> log_tau;    // [heads]
    LinearT<S> bias_mlp1;  // 1 -> hidden
    LinearT<S> bias_mlp2;  // hidden -> heads
    S tau_min = S(0.01);
};

using CosineAttentionParams = CosineAttentionParamsT<float>;

template <typename S>
CosineAttentionParamsT<S> make_cosine_attention(ParamStore<S>& store, const std::string& name, std::int64_t dim,
                                                std::int64_t heads, std::int64_t bias_hidden, Rng& rng,
                                                double tau_min = 0.01) {
    if (dim % heads != 0) throw std::invalid_argument("attention: embed_dim must be divisible by heads");
    CosineAttentionParamsT<S> p;
    p.heads = heads;
    p.qkv = make_linear(store, name + ".qkv", dim, 3 * dim, rng);
    p.proj = make_linear(store, name + ".proj", dim, dim, rng);
    p.log_tau = store.add(name + ".log_tau", TensorT<S>::zeros({heads}));  // tau starts at 1
    p.bias_mlp1 = make_linear(store, name + ".bias_mlp1", 1, bias_hidden, rng);
    p.bias_mlp2 = make_linear(store, name + ".bias_mlp2", bias_hidden, heads, rng);
    p.tau_min = S(tau_min);
    return p;
}

// Signed log-spaced relative offsets for every ordered pair in a 1D window,
// normalized into [-1, 1]: sign(delta) * log2(1 + |delta|) / log2(window).
template <typename S>
TensorT<S> relative_coord_table(std::int64_t window) {
    if (window < 1) throw std::invalid_argument("relative_coord_table: window must be >= 1");
    const double denom = window > 1 ? std::log2(static_cast<double>(window)) : 1.0;
    std::vector<S> table(static_cast<std::size_t>(window * window));
    for (std::int64_t i = 0; i < window; ++i)
        for (std::int64_t j = 0; j < window; ++j) {
            double delta = static_cast<double>(i - j);
            double mag = std::log2(1.0 + std::fabs(delta)) / denom;
            table[i * window + j] = static_cast<S>(delta < 0 ? -mag : (delta > 0 ? mag : 0.0));
        }
    return TensorT<S>::from_data({window * window, 1}, std::move(table));
}

// B[heads, tokens, tokens], a function of relative offsets only.
template <typename S>
TensorT<S> positional_bias(const TensorT<S>& table, const CosineAttentionParamsT<S>& params) {
    const std::int64_t pairs = table.shape()[0];
    const auto window = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(pairs))));
    if (window * window != pairs) throw std::invalid_argument("positional_bias: table is not a pair table");
    auto hidden = gelu(linear(table, params.bias_mlp1));
    auto b = linear(hidden, params.bias_mlp2);  // [w*w, heads]
    b = reshape(b, {window, window, params.heads});
    return permute(b, {2, 0, 1});
}

template <typename S>
struct AttentionTraceT {
    TensorT<S> cosine;   // [N, heads, w, w] similarity before temperature/bias
    TensorT<S> tau;      // [heads] effective temperature
    TensorT<S> weights;  // [N, heads, w, w] softmax output
};

using AttentionTrace = AttentionTraceT<float>;

// out = softmax(cos(q, k) / tau + B (+ mask)) v, heads merged and projected.
// q, k, v: [N, heads, tokens, head_dim]; mask (optional): [N, 1, tokens, tokens].
template <typename S>
TensorT<S> cosine_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                            const CosineAttentionParamsT<S>& params,
                            const TensorT<std::type_identity_t<S>>* mask = nullptr,
                            AttentionTraceT<std::type_identity_t<S>>* trace = nullptr) {
    if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4)
        throw std::invalid_argument("cosine_attention: q/k/v must be [N, heads, tokens, head_dim]");
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw std::invalid_argument("cosine_attention: q/k/v shapes differ");
    const std::int64_t n = q.shape()[0];
    const std::int64_t heads = q.shape()[1];
    const std::int64_t tokens = q.shape()[2];
    const std::int64_t head_dim = q.shape()[3];
    if (heads != params.heads) throw std::invalid_argument("cosine_attention: head count mismatch");

    constexpr S norm_eps = S(1e-12);
    auto qn = div(q, clamp_min(l2_norm(q, 3, true), norm_eps));
    auto kn = div(k, clamp_min(l2_norm(k, 3, true), norm_eps));
    auto cosine = matmul(qn, transpose_last2(kn));  // [N, heads, w, w]

    // upper clamp keeps exp finite for arbitrary log_tau values
    auto tau = clamp_min(exp(clamp_max(params.log_tau, S(60))), params.tau_min);
    auto logits = div(cosine, reshape(tau, {1, heads, 1, 1}));

    auto bias = positional_bias(relative_coord_table<S>(tokens), params);
    logits = add(logits, reshape(bias, {1, heads, tokens, tokens}));
    if (mask != nullptr) logits = add(logits, *mask);

    auto weights = softmax(logits, 3);
    if (trace != nullptr) {
        trace->cosine = cosine;
        trace->tau = tau;
        trace->weights = weights;
    }

    auto out = matmul(weights, v);                   // [N, heads, w, head_dim]
    out = permute(out, {0, 2, 1, 3});                // [N, w, heads, head_dim]
    out = reshape(out, {n, tokens, heads * head_dim});
    return linear(out, params.proj);
}

// ---------------------------------------------------------------------------
// STL2 block
// ---------------------------------------------------------------------------

template <typename S>
struct Stl2ParamsT {
    CosineAttentionParamsT<S> attn;
    LayerNormParamsT<S> ln1;
    LayerNormParamsT<S> ln2;
    LinearT<S> mlp1;
    LinearT<S> mlp2;
};

using Stl2Params = Stl2ParamsT<float>;

template <typename S>
Stl2ParamsT<S> make_stl2(ParamStore<S>& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                         std::int64_t bias_hidden, std::int64_t mlp_ratio, Rng& rng, double tau_min = 0.01) {
    Stl2ParamsT<S> p;
    p.attn = make_cosine_attention(store, name + ".attn", dim, heads, bias_hidden, rng, tau_min);
    p.ln1 = make_layer_norm(store, name + ".ln1", dim);
    p.ln2 = make_layer_norm(store, name + ".ln2", dim);
    p.mlp1 = make_linear(store, name + ".mlp1", dim, mlp_ratio * dim, rng);
    p.mlp2 = make_linear(store, name + ".mlp2", mlp_ratio * dim, dim, rng);
    return p;
}

// Swin V2 transformer layer with residual post-normalization:
// x = x + LN(WindowAttention(x)); x = x + LN(MLP(x)).
template <typename S>
TensorT<S> stl2_block(const TensorT<S>& x, const Stl2ParamsT<S>& params, WindowSpec spec) {
    if (x.rank() != 3) throw std::invalid_argument("stl2_block: expected [B, L, d]");
    const std::int64_t b = x.shape()[0];
    const std::int64_t len = x.shape()[1];
    const std::int64_t d = x.shape()[2];
    const std::int64_t heads = params.attn.heads;
    const std::int64_t head_dim = d / heads;

    WindowSpec eff = resolve_window(spec, len);
    auto part = window_partition(x, eff);
    const std::int64_t w = eff.window;
    const std::int64_t n = part.windows.shape()[0];

    auto qkv = linear(part.windows, params.attn.qkv);          // [n, w, 3d]
    qkv = reshape(qkv, {n, w, 3, heads, head_dim});
    qkv = permute(qkv, {2, 0, 3, 1, 4});                       // [3, n, heads, w, head_dim]
    auto q = reshape(slice(qkv, {0, 0, 0, 0, 0}, {1, n, heads, w, head_dim}), {n, heads, w, head_dim});
    auto k = reshape(slice(qkv, {1, 0, 0, 0, 0}, {1, n, heads, w, head_dim}), {n, heads, w, head_dim});
    auto v = reshape(slice(qkv, {2, 0, 0, 0, 0}, {1, n, heads, w, head_dim}), {n, heads, w, head_dim});

    TensorT<S> mask;
    auto mask_values = shift_attention_mask<S>(part.padded, w, eff.shift);
    if (!mask_values.empty()) {
        // same mask for every batch entry: tile [nw, w, w] up to [n, 1, w, w]
        const std::int64_t nw = part.padded / w;
        std::vector<S> tiled(static_cast<std::size_t>(n * w * w));
        for (std::int64_t i = 0; i < b; ++i)
            std::copy(mask_values.begin(), mask_values.end(), tiled.begin() + i * nw * w * w);
        mask = TensorT<S>::from_data({n, 1, w, w}, std::move(tiled));
    }

    auto attn_out = cosine_attention(q, k, v, params.attn, mask.defined() ? &mask : nullptr);
    auto merged = window_reverse(attn_out, part);  // [B, L, d]
    auto x1 = add(x, layer_norm(merged, params.ln1));

    auto hidden = gelu(linear(x1, params.mlp1));
    auto mlp_out = linear(hidden, params.mlp2);
    return add(x1, layer_norm(mlp_out, params.ln2));
}

}  // namespace tvsr
