#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cak/blocks.hpp"
#include "cak/rng.hpp"

namespace cak {

struct StageConfig {
    std::size_t depth = 1;
    std::size_t dim = 64;
    std::size_t patch = 2;
    std::size_t head_dim = 32;
    AffinityKind kind = AffinityKind::Mixture;
    StaticKind static_kind = StaticKind::Conv;
    std::size_t kernel_size = 3;
    std::size_t reduction = 1;

    std::size_t heads() const { return dim / head_dim; }
};

struct NetworkConfig {
    std::array<StageConfig, 4> stages;
    std::size_t input_h = 224;
    std::size_t input_w = 224;
    std::size_t input_channels = 3;
    std::size_t num_classes = 1000;
    std::size_t ffn_ratio = 4;
    std::string preset;
};

// Table-2 style presets. Full-scale variants use the 4-stage dims
// (128, 256, 320, 512) at 224^2; appending "-mini" scales dims to
// (32, 64, 80, 128) at 64^2 with head_dim 32 -> 8 for desk-scale training.
inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {
        "container", "container-light", "h-deit-s", "dw-3",
        "mh-dw-3",   "mlp",             "mlp-lr",   "mh-mlp-lr"};
    return names;
}

inline NetworkConfig preset(const std::string& name) {
    std::string base = name;
    bool mini = false;
    const std::string suffix = "-mini";
    if (base.size() > suffix.size() &&
        base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
        mini = true;
        base = base.substr(0, base.size() - suffix.size());
    }
    bool known = false;
    for (const auto& n : preset_names()) known = known || n == base;
    if (!known) {
        std::string all;
        for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "'; valid presets (optionally with -mini): " +
                          all);
    }

    NetworkConfig cfg;
    cfg.preset = name;
    const std::array<std::size_t, 4> dims =
        mini ? std::array<std::size_t, 4>{32, 64, 80, 128}
             : std::array<std::size_t, 4>{128, 256, 320, 512};
    const std::array<std::size_t, 4> depths{2, 3, 8, 3};
    const std::array<std::size_t, 4> patches{4, 2, 2, 2};
    cfg.input_h = cfg.input_w = mini ? 64 : 224;
    cfg.num_classes = mini ? 16 : 1000;
    const std::size_t attn_head_dim = mini ? 8 : 32;
    // largest reduction dividing every stage's token count at this resolution
    const std::size_t lowrank_reduction = mini ? 4 : 7;

    for (std::size_t s = 0; s < 4; ++s) {
        StageConfig& st = cfg.stages[s];
        st.depth = depths[s];
        st.dim = dims[s];
        st.patch = patches[s];
        st.kernel_size = 3;
        st.head_dim = attn_head_dim;
        if (base == "container") {
            st.kind = AffinityKind::Mixture;
            st.static_kind = StaticKind::Conv;
        } else if (base == "container-light") {
            st.kind = s < 3 ? AffinityKind::StaticConv : AffinityKind::Mixture;
            st.static_kind = StaticKind::Conv;
        } else if (base == "h-deit-s") {
            st.kind = AffinityKind::DynamicSA;
            st.static_kind = StaticKind::None;
        } else if (base == "dw-3") {
            st.kind = AffinityKind::StaticConv;
            st.static_kind = StaticKind::Conv;
            st.head_dim = 1;  // M = C: exact depthwise convolution
        } else if (base == "mh-dw-3") {
            st.kind = AffinityKind::StaticConv;
            st.static_kind = StaticKind::Conv;
        } else if (base == "mlp") {
            st.kind = AffinityKind::StaticMlp;
            st.static_kind = StaticKind::MlpDense;
            st.head_dim = st.dim;  // single head
        } else if (base == "mlp-lr") {
            st.kind = AffinityKind::StaticMlp;
            st.static_kind = StaticKind::MlpLowRank;
            st.head_dim = st.dim;
            st.reduction = lowrank_reduction;
        } else if (base == "mh-mlp-lr") {
            st.kind = AffinityKind::StaticMlp;
            st.static_kind = StaticKind::MlpLowRank;
            st.reduction = lowrank_reduction;
        }
    }
    return cfg;
}

enum class InitKind { Zero, One, TruncNormal, Xavier, XavierResidual, KernelScale };

template <typename T>
struct RegistryEntry {
    std::string name;
    Param<T>* param = nullptr;
    InitKind init = InitKind::Zero;
};

template <typename T>
struct NetworkStage {
    PatchEmbedParams<T> embed;
    std::optional<Param<T>> pos_embed;  // [N, C]; only for dynamic-only stages
    AggregatorConfig agg;
    std::vector<ContextBlockParams<T>> ctx;
    std::vector<FfnParams<T>> ffn;
    GridDims grid;
    std::size_t dim = 0;
};

// The 4-stage backbone: per stage a patch embedding followed by depth x
// (context block; ffn block), then final norm, token mean and a linear
// classifier. All parameters are reachable through a flat name registry
// whose order and names are deterministic.
template <typename T>
class Network {
public:
    static Network build(const NetworkConfig& cfg, std::uint64_t seed) {
        Network net;
        net.impl_ = std::make_unique<Impl>();
        net.impl_->config = cfg;
        net.impl_->construct();
        net.impl_->build_registry();
        net.impl_->init_params(seed);
        return net;
    }

    const NetworkConfig& config() const { return impl_->config; }
    std::vector<RegistryEntry<T>>& registry() { return impl_->registry; }
    const std::vector<RegistryEntry<T>>& registry() const { return impl_->registry; }
    std::array<NetworkStage<T>, 4>& stages() { return impl_->stages; }
    LayerNormParams<T>& final_norm() { return impl_->final_norm; }
    LinearParams<T>& head() { return impl_->head; }

    Param<T>* find(const std::string& name) const {
        for (const auto& e : impl_->registry)
            if (e.name == name) return e.param;
        return nullptr;
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        for (const auto& e : impl_->registry) total += e.param->numel();
        return total;
    }

    void zero_grad() {
        for (auto& e : impl_->registry) e.param->zero_grad();
    }

    // Single-sample tape over a [H, W, C_in] grid; returns [num_classes] logits.
    NodePtr<T> sample_forward(const Tensor<T>& grid_hwc) {
        const NetworkConfig& cfg = impl_->config;
        if (grid_hwc.shape() != Shape{cfg.input_h, cfg.input_w, cfg.input_channels}) {
            throw ShapeError("network expects input grid [" + std::to_string(cfg.input_h) + "," +
                             std::to_string(cfg.input_w) + "," +
                             std::to_string(cfg.input_channels) + "], got " +
                             shape_str(grid_hwc.shape()));
        }
        NodePtr<T> x = constant(grid_hwc);
        GridDims grid{cfg.input_h, cfg.input_w};
        for (std::size_t s = 0; s < 4; ++s) {
            auto& stage = impl_->stages[s];
            // tokens of the previous stage viewed as a [H, W, C] grid again
            if (s > 0) x = reshape(x, Shape{grid.h, grid.w, impl_->stages[s - 1].dim});
            x = patch_embed(x, stage.embed);
            grid = stage.grid;
            if (stage.pos_embed) x = add(x, leaf(*stage.pos_embed));
            for (std::size_t b = 0; b < stage.ctx.size(); ++b) {
                x = context_block_forward(x, stage.agg, stage.ctx[b]);
                x = ffn_forward(x, stage.ffn[b]);
            }
        }
        x = layer_norm(x, leaf(impl_->final_norm.gamma), leaf(impl_->final_norm.beta));
        x = linear(mean_tokens(x), impl_->head);
        return reshape(x, Shape{impl_->config.num_classes});
    }

    // Batch forward over [B, C_in, H, W]; per-sample independent, batch order
    // preserved, sharded across workers into pre-assigned output rows.
    Tensor<T> forward(const Tensor<T>& batch, int workers = 1) {
        const NetworkConfig& cfg = impl_->config;
        const Shape& s = batch.shape();
        if (s.size() != 4 || s[1] != cfg.input_channels || s[2] != cfg.input_h ||
            s[3] != cfg.input_w) {
            throw ShapeError("network expects batch [B," + std::to_string(cfg.input_channels) +
                             "," + std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w) +
                             "], got " + shape_str(s));
        }
        const std::size_t b = s[0];
        Tensor<T> logits(Shape{b, cfg.num_classes});
        if (b == 0) return logits;

        auto run_range = [&](std::size_t begin, std::size_t stride) {
            for (std::size_t i = begin; i < b; i += stride) {
                Tensor<T> grid = chw_to_hwc(batch, i);
                auto out = sample_forward(grid);
                for (std::size_t j = 0; j < cfg.num_classes; ++j)
                    logits.at(i, j) = out->value[j];
            }
        };
        const std::size_t nw = std::max(1, workers);
        if (nw == 1) {
            run_range(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t t = 0; t < nw; ++t) pool.emplace_back(run_range, t, nw);
            for (auto& th : pool) th.join();
        }
        return logits;
    }

    Tensor<T> chw_to_hwc(const Tensor<T>& batch, std::size_t index) const {
        const NetworkConfig& cfg = impl_->config;
        Tensor<T> grid(Shape{cfg.input_h, cfg.input_w, cfg.input_channels});
        const std::size_t plane = cfg.input_h * cfg.input_w;
        const T* src = batch.data() + index * cfg.input_channels * plane;
        for (std::size_t c = 0; c < cfg.input_channels; ++c)
            for (std::size_t y = 0; y < cfg.input_h; ++y)
                for (std::size_t x = 0; x < cfg.input_w; ++x)
                    grid.at(y, x, c) = src[c * plane + y * cfg.input_w + x];
        return grid;
    }

    // Same structure, same parameter values, independent storage.
    Network clone() const {
        Network copy = build(impl_->config, 0);
        const auto& src = impl_->registry;
        auto& dst = copy.impl_->registry;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].param->value = src[i].param->value;
        return copy;
    }

private:
    struct Impl {
        NetworkConfig config;
        std::array<NetworkStage<T>, 4> stages;
        LayerNormParams<T> final_norm;
        LinearParams<T> head;
        std::vector<RegistryEntry<T>> registry;

        void construct() {
            if (config.num_classes == 0) throw ConfigError("num_classes must be positive");
            std::size_t h = config.input_h, w = config.input_w;
            std::size_t c_in = config.input_channels;
            for (std::size_t s = 0; s < 4; ++s) {
                const StageConfig& sc = config.stages[s];
                if (sc.patch == 0 || h % sc.patch != 0 || w % sc.patch != 0) {
                    throw ConfigError("stage " + std::to_string(s + 1) + ": resolution " +
                                      std::to_string(h) + "x" + std::to_string(w) +
                                      " not divisible by patch " + std::to_string(sc.patch));
                }
                if (sc.head_dim == 0 || sc.dim % sc.head_dim != 0) {
                    throw ConfigError("stage " + std::to_string(s + 1) + ": dim " +
                                      std::to_string(sc.dim) + " not divisible by head_dim " +
                                      std::to_string(sc.head_dim));
                }
                h /= sc.patch;
                w /= sc.patch;
                NetworkStage<T>& stage = stages[s];
                stage.grid = GridDims{h, w};
                stage.dim = sc.dim;
                stage.embed = PatchEmbedParams<T>(sc.patch, c_in, sc.dim);
                stage.agg.channels = sc.dim;
                stage.agg.heads = sc.heads();
                stage.agg.kind = sc.kind;
                stage.agg.static_kind = sc.static_kind;
                stage.agg.kernel_size = sc.kernel_size;
                stage.agg.reduction = sc.reduction;
                if (sc.kind == AffinityKind::DynamicSA) {
                    stage.pos_embed = Param<T>(Tensor<T>(Shape{h * w, sc.dim}));
                }
                try {
                    for (std::size_t b = 0; b < sc.depth; ++b) {
                        stage.ctx.push_back(make_context_block<T>(stage.agg, stage.grid));
                        stage.ffn.emplace_back(sc.dim, sc.dim * config.ffn_ratio);
                    }
                } catch (const ConfigError& e) {
                    throw ConfigError("stage " + std::to_string(s + 1) + ": " + e.what());
                }
                c_in = sc.dim;
            }
            final_norm = LayerNormParams<T>(config.stages[3].dim);
            head = LinearParams<T>(config.stages[3].dim, config.num_classes);
        }

        std::size_t total_blocks() const {
            std::size_t n = 0;
            for (const auto& sc : config.stages) n += sc.depth;
            return std::max<std::size_t>(n, 1);
        }

        void add(const std::string& name, Param<T>& p, InitKind init) {
            registry.push_back({name, &p, init});
        }

        void add_linear(const std::string& prefix, LinearParams<T>& lin,
                        InitKind weight_init = InitKind::Xavier) {
            add(prefix + ".weight", lin.weight, weight_init);
            add(prefix + ".bias", lin.bias, InitKind::Zero);
        }

        void add_norm(const std::string& prefix, LayerNormParams<T>& n) {
            add(prefix + ".gamma", n.gamma, InitKind::One);
            add(prefix + ".beta", n.beta, InitKind::Zero);
        }

        void build_registry() {
            registry.clear();
            for (std::size_t s = 0; s < 4; ++s) {
                const std::string sp = "stage" + std::to_string(s + 1);
                NetworkStage<T>& stage = stages[s];
                add_linear(sp + ".embed.proj", stage.embed.proj);
                add_norm(sp + ".embed.norm", stage.embed.norm);
                if (stage.pos_embed) add(sp + ".pos_embed", *stage.pos_embed, InitKind::TruncNormal);
                for (std::size_t b = 0; b < stage.ctx.size(); ++b) {
                    const std::string bp = sp + ".block" + std::to_string(b);
                    ContextBlockParams<T>& ctx = stage.ctx[b];
                    add_norm(bp + ".ctx.norm", ctx.pre_norm);
                    add_linear(bp + ".ctx.value", ctx.value_proj);
                    add_linear(bp + ".ctx.out", ctx.out_proj, InitKind::XavierResidual);
                    if (ctx.qk) {
                        add_linear(bp + ".ctx.q", ctx.qk->q);
                        add_linear(bp + ".ctx.k", ctx.qk->k);
                    }
                    if (ctx.static_conv)
                        add(bp + ".ctx.kernel", ctx.static_conv->kernel, InitKind::KernelScale);
                    if (ctx.static_mlp) {
                        if (ctx.static_mlp->mode == MlpAffinityMode::Dense) {
                            add(bp + ".ctx.mlp", ctx.static_mlp->dense, InitKind::Xavier);
                        } else {
                            add(bp + ".ctx.mlp_left", ctx.static_mlp->factor_left,
                                InitKind::Xavier);
                            add(bp + ".ctx.mlp_right", ctx.static_mlp->factor_right,
                                InitKind::Xavier);
                        }
                    }
                    if (ctx.mix) {
                        add(bp + ".ctx.alpha", ctx.mix->alpha, InitKind::One);
                        add(bp + ".ctx.beta", ctx.mix->beta, InitKind::One);
                    }
                    FfnParams<T>& ffn = stage.ffn[b];
                    add_norm(bp + ".ffn.norm", ffn.pre_norm);
                    add_linear(bp + ".ffn.expand", ffn.expand);
                    add_linear(bp + ".ffn.contract", ffn.contract, InitKind::XavierResidual);
                }
            }
            add_norm("final_norm", final_norm);
            // zero-initialized classifier: logits start at zero, the loss at
            // exactly ln(num_classes)
            add_linear("head", head, InitKind::Zero);

            std::unordered_set<std::string> names;
            for (const auto& e : registry) {
                if (!names.insert(e.name).second)
                    throw ConfigError("duplicate parameter name in registry: " + e.name);
            }
        }

        // Name-addressed init: every parameter draws from its own stream, so
        // values do not depend on registry order.
        void init_params(std::uint64_t seed) {
            SplitRng root(seed);
            for (auto& e : registry) {
                switch (e.init) {
                    case InitKind::Zero:
                        for (std::size_t i = 0; i < e.param->numel(); ++i)
                            e.param->value[i] = T{0};
                        break;
                    case InitKind::One:
                        for (std::size_t i = 0; i < e.param->numel(); ++i)
                            e.param->value[i] = T{1};
                        break;
                    case InitKind::TruncNormal: {
                        SplitRng stream = root.fork(e.name);
                        for (std::size_t i = 0; i < e.param->numel(); ++i)
                            e.param->value[i] = static_cast<T>(stream.trunc_normal(0.02));
                        break;
                    }
                    case InitKind::Xavier:
                    case InitKind::XavierResidual: {
                        SplitRng stream = root.fork(e.name);
                        const Shape& s = e.param->value.shape();
                        const std::size_t fan_in = s.size() >= 2 ? s[s.size() - 2] : s[0];
                        const std::size_t fan_out = s.size() >= 2 ? s[s.size() - 1] : s[0];
                        double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
                        // projections feeding the residual stream start small
                        // so the stream keeps unit scale at any depth
                        if (e.init == InitKind::XavierResidual)
                            sd /= std::sqrt(2.0 * static_cast<double>(total_blocks()));
                        for (std::size_t i = 0; i < e.param->numel(); ++i)
                            e.param->value[i] = static_cast<T>(stream.trunc_normal(sd));
                        break;
                    }
                    case InitKind::KernelScale: {
                        // conv affinity kernels: rows of the materialized
                        // affinity hold k^2 entries, kept at O(1) total mass
                        SplitRng stream = root.fork(e.name);
                        const Shape& s = e.param->value.shape();
                        const double sd = 1.0 / static_cast<double>(s.back() * s.back());
                        for (std::size_t i = 0; i < e.param->numel(); ++i)
                            e.param->value[i] = static_cast<T>(stream.trunc_normal(sd));
                        break;
                    }
                }
            }
        }
    };

    std::unique_ptr<Impl> impl_;
};

}  // namespace cak
