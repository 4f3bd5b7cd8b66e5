#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvsr/attention.hpp"
#include "tvsr/nn.hpp"
#include "tvsr/rng.hpp"
#include "tvsr/tensor.hpp"

namespace tvsr {

enum class Variant { full, no_tab, encoder_subpixel, vit_encoder };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_tab: return "no_tab";
        case Variant::encoder_subpixel: return "encoder_subpixel";
        case Variant::vit_encoder: return "vit_encoder";
    }
    throw std::invalid_argument("variant_name: bad variant");
}

inline Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "no_tab") return Variant::no_tab;
    if (name == "encoder_subpixel") return Variant::encoder_subpixel;
    if (name == "vit_encoder") return Variant::vit_encoder;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

struct ModelConfig {
    std::int64_t embed_dim = 32;
    std::int64_t heads = 4;
    std::int64_t encoder_depth = 4;
    std::int64_t n_fim = 2;
    std::int64_t stl_per_tab = 4;  // fixed by the four-stage pathway design
    std::int64_t window = 8;
    std::int64_t r = 4;  // depth upsampling factor
    Variant variant = Variant::full;
    double tau_min = 0.01;
    std::int64_t mlp_ratio = 4;
    std::int64_t bias_hidden = 64;

    void validate() const {
        if (r < 1) throw std::invalid_argument("ModelConfig: r must be >= 1");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw std::invalid_argument("ModelConfig: embed_dim must be a positive multiple of heads");
        if (encoder_depth < 1) throw std::invalid_argument("ModelConfig: encoder_depth must be >= 1");
        if (window < 1) throw std::invalid_argument("ModelConfig: window must be >= 1");
        if (mlp_ratio < 1) throw std::invalid_argument("ModelConfig: mlp_ratio must be >= 1");
        if (bias_hidden < 1) throw std::invalid_argument("ModelConfig: bias_hidden must be >= 1");
        if (tau_min <= 0) throw std::invalid_argument("ModelConfig: tau_min must be positive");
        if (variant == Variant::full && stl_per_tab != 4)
            throw std::invalid_argument("ModelConfig: stl_per_tab is fixed at 4 for the full variant");
        if ((variant == Variant::full || variant == Variant::no_tab) && n_fim < 1)
            throw std::invalid_argument("ModelConfig: decoder variants need n_fim >= 1");
    }

    bool has_decoder() const { return variant == Variant::full || variant == Variant::no_tab; }
    bool has_tab() const { return variant == Variant::full; }
    bool global_attention() const { return variant == Variant::vit_encoder; }
};

// One TAB pathway: project in, run four STL2 stages along the permuted token
// axis, project back. The out projection starts at zero so a fresh TAB is the
// identity.
template <typename S>
struct PathwayParamsT {
    LinearT<S> in_proj;
    LinearT<S> out_proj;
    std::vector<Stl2ParamsT<S>> stages;
};

template <typename S>
struct TabParamsT {
    PathwayParamsT<S> sagittal;  // tokens along depth
    PathwayParamsT<S> coronal;   // tokens along height
};

using TabParams = TabParamsT<float>;

template <typename S>
struct FimParamsT {
    std::optional<TabParamsT<S>> tab;
    Stl2ParamsT<S> stl;
};

template <typename S>
struct ModelParamsT {
    ModelConfig config;
    LinearT<S> embed;                      // 1 -> d per voxel
    std::vector<Stl2ParamsT<S>> encoder;
    std::vector<FimParamsT<S>> fims;
    LinearT<S> expand;                     // d -> r*d
    LinearT<S> head;                       // d -> 1
    ParamStore<S> store;
};

using ModelParams = ModelParamsT<float>;

namespace detail {

template <typename S>
PathwayParamsT<S> make_pathway(ParamStore<S>& store, const std::string& name, const ModelConfig& cfg, Rng& rng) {
    PathwayParamsT<S> p;
    p.in_proj = make_linear(store, name + ".in_proj", cfg.embed_dim, cfg.embed_dim, rng);
    for (std::int64_t j = 0; j < cfg.stl_per_tab; ++j)
        p.stages.push_back(make_stl2(store, name + ".stl." + std::to_string(j), cfg.embed_dim, cfg.heads,
                                     cfg.bias_hidden, cfg.mlp_ratio, rng, cfg.tau_min));
    p.out_proj = make_linear(store, name + ".out_proj", cfg.embed_dim, cfg.embed_dim, rng, /*zero_init=*/true);
    return p;
}

}  // namespace detail

template <typename S>
ModelParamsT<S> init_parameters(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParamsT<S> m;
    m.config = config;
    Rng rng(seed);
    m.embed = make_linear(m.store, "embed", 1, config.embed_dim, rng);
    for (std::int64_t i = 0; i < config.encoder_depth; ++i)
        m.encoder.push_back(make_stl2(m.store, "encoder." + std::to_string(i), config.embed_dim, config.heads,
                                      config.bias_hidden, config.mlp_ratio, rng, config.tau_min));
    if (config.has_decoder()) {
        for (std::int64_t f = 0; f < config.n_fim; ++f) {
            FimParamsT<S> fim;
            std::string base = "fim." + std::to_string(f);
            if (config.has_tab()) {
                TabParamsT<S> tab;
                tab.sagittal = detail::make_pathway(m.store, base + ".tab.sagittal", config, rng);
                tab.coronal = detail::make_pathway(m.store, base + ".tab.coronal", config, rng);
                fim.tab = std::move(tab);
            }
            fim.stl = make_stl2(m.store, base + ".stl", config.embed_dim, config.heads, config.bias_hidden,
                                config.mlp_ratio, rng, config.tau_min);
            m.fims.push_back(std::move(fim));
        }
    }
    m.expand = make_linear(m.store, "expand", config.embed_dim, config.r * config.embed_dim, rng);
    m.head = make_linear(m.store, "head", config.embed_dim, 1, rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward pieces. The working layout is "lattice" [B, D, H, W, d]; the public
// latent layout is [B, d, D, H, W].
// ---------------------------------------------------------------------------

namespace detail {

// In-plane STL2 blocks alternate token axis W/H and shift 0/window-half.
inline WindowSpec block_spec(const ModelConfig& cfg, std::int64_t index) {
    if (cfg.global_attention()) return {std::int64_t(1) << 30, 0};
    std::int64_t shift = (index % 4 >= 2) ? cfg.window / 2 : 0;
    return {cfg.window, shift};
}

template <typename S>
TensorT<S> lattice_stl2(const TensorT<S>& lattice, const Stl2ParamsT<S>& params, WindowSpec spec, bool along_h) {
    const auto& s = lattice.shape();  // [B, D, H, W, d]
    if (!along_h) {
        auto tokens = reshape(lattice, {s[0] * s[1] * s[2], s[3], s[4]});
        return reshape(stl2_block(tokens, params, spec), s);
    }
    auto swapped = permute(lattice, {0, 1, 3, 2, 4});  // [B, D, W, H, d]
    auto tokens = reshape(swapped, {s[0] * s[1] * s[3], s[2], s[4]});
    auto y = reshape(stl2_block(tokens, params, spec), {s[0], s[1], s[3], s[2], s[4]});
    return permute(y, {0, 1, 3, 2, 4});
}

template <typename S>
TensorT<S> pathway_tokens(const TensorT<S>& tokens, const PathwayParamsT<S>& pathway, const ModelConfig& cfg) {
    auto y = linear(tokens, pathway.in_proj);
    for (std::size_t j = 0; j < pathway.stages.size(); ++j) {
        WindowSpec spec{cfg.window, (j % 2 == 1) ? cfg.window / 2 : 0};
        y = stl2_block(y, pathway.stages[j], spec);
    }
    return linear(y, pathway.out_proj);
}

template <typename S>
TensorT<S> tab_lattice(const TensorT<S>& lattice, const TabParamsT<S>& tab, const ModelConfig& cfg) {
    const auto& s = lattice.shape();  // [B, D, H, W, d]

    // sagittal: depth is the token axis
    auto sag = permute(lattice, {0, 2, 3, 1, 4});  // [B, H, W, D, d]
    sag = reshape(sag, {s[0] * s[2] * s[3], s[1], s[4]});
    sag = pathway_tokens(sag, tab.sagittal, cfg);
    sag = reshape(sag, {s[0], s[2], s[3], s[1], s[4]});
    sag = permute(sag, {0, 3, 1, 2, 4});  // back to [B, D, H, W, d]

    // coronal: height is the token axis
    auto cor = permute(lattice, {0, 1, 3, 2, 4});  // [B, D, W, H, d]
    cor = reshape(cor, {s[0] * s[1] * s[3], s[2], s[4]});
    cor = pathway_tokens(cor, tab.coronal, cfg);
    cor = reshape(cor, {s[0], s[1], s[3], s[2], s[4]});
    cor = permute(cor, {0, 1, 3, 2, 4});

    return add(add(lattice, sag), cor);
}

template <typename S>
TensorT<S> decoder_tail(const TensorT<S>& lattice, const ModelParamsT<S>& params) {
    auto y = linear(lattice, params.expand);           // [B, D, H, W, r*d]
    y = depth_subpixel(y, params.config.r);            // [B, r*D, H, W, d]
    y = linear(y, params.head);                        // [B, r*D, H, W, 1]
    return permute(y, {0, 4, 1, 2, 3});                // [B, 1, r*D, H, W]
}

template <typename S>
TensorT<S> require_volume_input(const TensorT<S>& x, const char* who) {
    if (x.rank() != 5 || x.shape()[1] != 1)
        throw std::invalid_argument(std::string(who) + ": expected input [B, 1, D, H, W], got " +
                                    shape_str(x.shape()));
    return x;
}

}  // namespace detail

// z_out = z_in + P_re_sag(pathway_sag(P_sag(z_in))) + P_re_cor(pathway_cor(P_cor(z_in)))
// z_in: [B, d, D, H, W].
template <typename S>
TensorT<S> tab_forward(const TensorT<S>& z_in, const TabParamsT<S>& tab, const ModelConfig& cfg) {
    if (z_in.rank() != 5) throw std::invalid_argument("tab_forward: expected [B, d, D, H, W]");
    auto lattice = permute(z_in, {0, 2, 3, 4, 1});
    auto out = detail::tab_lattice(lattice, tab, cfg);
    return permute(out, {0, 4, 1, 2, 3});
}

// Per-voxel linear embedding followed by the in-plane encoder stack.
// x: [B, 1, D, H, W] normalized intensities; returns [B, d, D, H, W].
template <typename S>
TensorT<S> encode(const TensorT<S>& x, const ModelParamsT<S>& params) {
    detail::require_volume_input(x, "encode");
    auto lattice = permute(x, {0, 2, 3, 4, 1});  // [B, D, H, W, 1]
    lattice = linear(lattice, params.embed);
    for (std::size_t i = 0; i < params.encoder.size(); ++i)
        lattice = detail::lattice_stl2(lattice, params.encoder[i],
                                       detail::block_spec(params.config, static_cast<std::int64_t>(i)),
                                       /*along_h=*/i % 2 == 1);
    return permute(lattice, {0, 4, 1, 2, 3});
}

// FIM stack (TAB + in-plane STL2 per module) and the subpixel upsampling tail.
// latent: [B, d, D, H, W]; returns [B, 1, r*D, H, W].
template <typename S>
TensorT<S> decode(const TensorT<S>& latent, const ModelParamsT<S>& params) {
    if (latent.rank() != 5) throw std::invalid_argument("decode: expected [B, d, D, H, W]");
    auto lattice = permute(latent, {0, 2, 3, 4, 1});
    for (std::size_t f = 0; f < params.fims.size(); ++f) {
        const auto& fim = params.fims[f];
        if (fim.tab) lattice = detail::tab_lattice(lattice, *fim.tab, params.config);
        lattice = detail::lattice_stl2(lattice, fim.stl,
                                       detail::block_spec(params.config, static_cast<std::int64_t>(f)),
                                       /*along_h=*/f % 2 == 1);
    }
    return detail::decoder_tail(lattice, params);
}

// Full model: [B, 1, D, H, W] -> [B, 1, r*D, H, W] for every variant.
template <typename S>
TensorT<S> forward(const TensorT<S>& x, const ModelParamsT<S>& params) {
    detail::require_volume_input(x, "forward");
    auto latent = encode(x, params);
    if (params.config.has_decoder()) return decode(latent, params);
    auto lattice = permute(latent, {0, 2, 3, 4, 1});
    return detail::decoder_tail(lattice, params);
}

// Mean absolute error over all voxels.
template <typename S>
TensorT<S> l1_loss(const TensorT<S>& y_hat, const TensorT<S>& y) {
    if (y_hat.shape() != y.shape())
        throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(y_hat.shape()) + " vs " +
                                    shape_str(y.shape()));
    return mean_all(abs(sub(y_hat, y)));
}

}  // namespace tvsr
