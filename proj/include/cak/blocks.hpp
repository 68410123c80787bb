#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "cak/affinity.hpp"
#include "cak/autodiff.hpp"
#include "cak/errors.hpp"

// The block pair of the backbone: a spatial aggregation sub-module (affinity
// times values, heads concatenated, projected, residual) followed by a
// 2-layer MLP channel-fusion sub-module. Both are pre-norm with the residual
// taken on the un-normalized input.
namespace cak {

enum class AffinityKind { DynamicSA, StaticConv, StaticMlp, Mixture };

enum class StaticKind { None, Conv, MlpDense, MlpLowRank };

inline const char* affinity_kind_name(AffinityKind k) {
    switch (k) {
        case AffinityKind::DynamicSA: return "sa";
        case AffinityKind::StaticConv: return "conv";
        case AffinityKind::StaticMlp: return "mlp";
        case AffinityKind::Mixture: return "mixture";
    }
    return "?";
}

struct AggregatorConfig {
    std::size_t channels = 0;
    std::size_t heads = 1;
    AffinityKind kind = AffinityKind::DynamicSA;
    StaticKind static_kind = StaticKind::None;
    std::size_t kernel_size = 3;   // conv static path
    std::size_t reduction = 1;     // low-rank mlp static path
    bool normalize = true;         // disabled only by verification harnesses

    bool has_dynamic() const {
        return kind == AffinityKind::DynamicSA || kind == AffinityKind::Mixture;
    }
    bool has_static() const { return kind != AffinityKind::DynamicSA; }
};

template <typename T>
struct LayerNormParams {
    Param<T> gamma;
    Param<T> beta;

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t c)
        : gamma(Tensor<T>::full(Shape{c}, T{1})), beta(Tensor<T>(Shape{c})) {}
};

template <typename T>
struct LinearParams {
    Param<T> weight;  // [in, out]
    Param<T> bias;    // [out]

    LinearParams() = default;
    LinearParams(std::size_t in, std::size_t out)
        : weight(Tensor<T>(Shape{in, out})), bias(Tensor<T>(Shape{out})) {}
};

template <typename T>
NodePtr<T> linear(const NodePtr<T>& x, LinearParams<T>& p) {
    return add(matmul(x, leaf(p.weight)), leaf(p.bias));
}

template <typename T>
struct QkProj {
    LinearParams<T> q;
    LinearParams<T> k;

    QkProj() = default;
    explicit QkProj(std::size_t c) : q(c, c), k(c, c) {}
};

template <typename T>
struct ContextBlockParams {
    LayerNormParams<T> pre_norm;
    LinearParams<T> value_proj;
    LinearParams<T> out_proj;
    std::optional<QkProj<T>> qk;
    std::optional<ConvAffinityParams<T>> static_conv;
    std::optional<MlpAffinityParams<T>> static_mlp;
    std::optional<MixCoeffs<T>> mix;
};

// Builds exactly the parameter set the config implies; nothing unused is
// allocated.
template <typename T>
ContextBlockParams<T> make_context_block(const AggregatorConfig& cfg, GridDims grid) {
    if (cfg.channels == 0) throw ConfigError("context block channel count must be positive");
    if (cfg.heads == 0 || cfg.channels % cfg.heads != 0) {
        throw ConfigError("channel count " + std::to_string(cfg.channels) +
                          " not divisible by head count " + std::to_string(cfg.heads));
    }
    ContextBlockParams<T> p;
    p.pre_norm = LayerNormParams<T>(cfg.channels);
    p.value_proj = LinearParams<T>(cfg.channels, cfg.channels);
    p.out_proj = LinearParams<T>(cfg.channels, cfg.channels);
    if (cfg.has_dynamic()) p.qk.emplace(cfg.channels);
    if (cfg.has_static()) {
        switch (cfg.static_kind) {
            case StaticKind::Conv:
                p.static_conv.emplace(cfg.heads, cfg.kernel_size, grid);
                break;
            case StaticKind::MlpDense:
                p.static_mlp = MlpAffinityParams<T>::make_dense(cfg.heads, grid.tokens());
                break;
            case StaticKind::MlpLowRank:
                p.static_mlp =
                    MlpAffinityParams<T>::make_lowrank(cfg.heads, grid.tokens(), cfg.reduction);
                break;
            case StaticKind::None:
                throw ConfigError("static affinity kind required for " +
                                  std::string(affinity_kind_name(cfg.kind)) + " block");
        }
    }
    if (cfg.kind == AffinityKind::Mixture) p.mix.emplace();
    return p;
}

template <typename T>
AffinityMatrix<T> static_affinity(const AggregatorConfig& cfg, ContextBlockParams<T>& params,
                                  std::size_t tokens) {
    AffinityMatrix<T> a;
    if (params.static_conv) {
        if (params.static_conv->grid.tokens() != tokens) {
            throw ShapeError("static affinity grid " + std::to_string(params.static_conv->grid.h) +
                             "x" + std::to_string(params.static_conv->grid.w) +
                             " does not match token count " + std::to_string(tokens));
        }
        a = conv_affinity(*params.static_conv);
    } else if (params.static_mlp) {
        if (params.static_mlp->tokens != tokens) {
            throw ShapeError("static affinity tokens " + std::to_string(params.static_mlp->tokens) +
                             " do not match input token count " + std::to_string(tokens));
        }
        a = mlp_affinity(*params.static_mlp);
    } else {
        throw ConfigError("block has no static affinity parameters");
    }
    (void)cfg;
    return a;
}

// Spatial aggregation sub-module: pre-norm, value projection, affinity per
// the configured kind, aggregation, output projection, residual.
template <typename T>
NodePtr<T> context_block_forward(const NodePtr<T>& x, const AggregatorConfig& cfg,
                                 ContextBlockParams<T>& params) {
    const Shape& s = x->value.shape();
    if (s.size() != 2 || s[1] != cfg.channels) {
        throw ShapeError("context block expects [N," + std::to_string(cfg.channels) + "], got " +
                         shape_str(s));
    }
    const std::size_t tokens = s[0];

    NodePtr<T> xn = x;
    if (cfg.normalize)
        xn = layer_norm(x, leaf(params.pre_norm.gamma), leaf(params.pre_norm.beta));
    auto v = linear(xn, params.value_proj);

    AffinityMatrix<T> a;
    switch (cfg.kind) {
        case AffinityKind::DynamicSA: {
            auto q = heads_split(linear(xn, params.qk->q), cfg.heads);
            auto k = heads_split(linear(xn, params.qk->k), cfg.heads);
            a = sa_affinity(q, k);
            break;
        }
        case AffinityKind::StaticConv:
        case AffinityKind::StaticMlp:
            a = static_affinity(cfg, params, tokens);
            break;
        case AffinityKind::Mixture: {
            auto q = heads_split(linear(xn, params.qk->q), cfg.heads);
            auto k = heads_split(linear(xn, params.qk->k), cfg.heads);
            auto dyn = sa_affinity(q, k);
            a = mix_affinity(*params.mix, dyn, static_affinity(cfg, params, tokens));
            break;
        }
    }
    return add(linear(aggregate(a, v), params.out_proj), x);
}

// Container-PAM: the mixture block with a dense MLP-style static affinity.
template <typename T>
NodePtr<T> pam_block_forward(const NodePtr<T>& x, const AggregatorConfig& cfg,
                             ContextBlockParams<T>& params) {
    if (cfg.kind != AffinityKind::Mixture || !params.static_mlp ||
        params.static_mlp->mode != MlpAffinityMode::Dense) {
        throw ConfigError("pam block requires a mixture with a dense static affinity");
    }
    return context_block_forward(x, cfg, params);
}

template <typename T>
struct FfnParams {
    LayerNormParams<T> pre_norm;
    LinearParams<T> expand;    // [C, hidden]
    LinearParams<T> contract;  // [hidden, C]
    std::size_t hidden = 0;
    bool normalize = true;

    FfnParams() = default;
    FfnParams(std::size_t c, std::size_t hidden_dim)
        : pre_norm(c), expand(c, hidden_dim), contract(hidden_dim, c), hidden(hidden_dim) {
        if (hidden_dim < c) {
            throw ConfigError("ffn expansion must not shrink: hidden " + std::to_string(hidden_dim) +
                              " < channels " + std::to_string(c));
        }
    }
};

// Channel fusion sub-module: y = x + W2 gelu(W1 norm(x)).
template <typename T>
NodePtr<T> ffn_forward(const NodePtr<T>& x, FfnParams<T>& params) {
    NodePtr<T> xn = x;
    if (params.normalize)
        xn = layer_norm(x, leaf(params.pre_norm.gamma), leaf(params.pre_norm.beta));
    return add(linear(gelu(linear(xn, params.expand)), params.contract), x);
}

template <typename T>
struct PatchEmbedParams {
    std::size_t patch = 1;
    LinearParams<T> proj;  // [p*p*C_in, C_out]
    LayerNormParams<T> norm;
    bool normalize = true;

    PatchEmbedParams() = default;
    PatchEmbedParams(std::size_t p, std::size_t c_in, std::size_t c_out)
        : patch(p), proj(p * p * c_in, c_out), norm(c_out) {}
};

// Fuses non-overlapping p x p patches of a [H, W, C_in] grid into single
// tokens: flatten row-major, project, normalize. Output tokens are row-major
// over the [H/p, W/p] grid.
template <typename T>
NodePtr<T> patch_embed(const NodePtr<T>& x, PatchEmbedParams<T>& params) {
    auto rows = extract_patches(x, params.patch);
    auto projected = linear(rows, params.proj);
    if (!params.normalize) return projected;
    return layer_norm(projected, leaf(params.norm.gamma), leaf(params.norm.beta));
}

}  // namespace cak
