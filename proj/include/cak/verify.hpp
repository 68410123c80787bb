#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cak/blocks.hpp"
#include "cak/oracle.hpp"
#include "cak/rng.hpp"

// Oracle-backed verification suites, shared by the CLI `verify` command and
// the acceptance tests: equivalence of the affinity path with direct
// depthwise convolution and naive attention, finite-difference gradient
// checks for every block variant, and the bit-exact degenerate-coefficient
// identities of the mixture.
namespace cak::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Max relative error between the tape gradient and central finite
// differences over all elements of the listed parameters; entries where both
// are below 1e-8 are ignored.
inline double max_rel_grad_err(const std::vector<Param<double>*>& params,
                               const std::function<NodePtr<double>()>& build_loss,
                               double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    backward(build_loss());
    std::vector<double> analytic;
    std::vector<double> flat;
    for (auto* p : params) {
        analytic.insert(analytic.end(), p->grad.vec().begin(), p->grad.vec().end());
        flat.insert(flat.end(), p->value.vec().begin(), p->value.vec().end());
    }
    auto scatter = [&](const std::vector<double>& x) {
        std::size_t off = 0;
        for (auto* p : params) {
            std::copy(x.begin() + off, x.begin() + off + p->numel(), p->value.vec().begin());
            off += p->numel();
        }
    };
    auto f = [&](const std::vector<double>& x) {
        scatter(x);
        return build_loss()->value[0];
    };
    std::vector<double> numeric = oracle::finite_diff_grad(f, flat, h);
    scatter(flat);

    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double ga = analytic[i];
        const double gn = numeric[i];
        if (std::abs(ga) < 1e-8 && std::abs(gn) < 1e-8) continue;
        worst = std::max(worst, std::abs(ga - gn) / std::max(std::abs(ga), std::abs(gn)));
    }
    return worst;
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, SplitRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline void randomize(Param<double>& p, SplitRng& rng, double scale = 0.5) {
    for (std::size_t i = 0; i < p.numel(); ++i) p.value[i] = rng.uniform(-scale, scale);
}

// Randomization keeps the check well conditioned at h = 1e-5: moderate
// weight scales avoid saturated softmax rows and gamma stays away from zero.
inline void randomize_block(ContextBlockParams<double>& p, SplitRng& rng) {
    for (std::size_t i = 0; i < p.pre_norm.gamma.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p.pre_norm.gamma.value[i] = sign * rng.uniform(0.5, 1.2);
        p.pre_norm.beta.value[i] = rng.uniform(-0.2, 0.2);
    }
    randomize(p.value_proj.weight, rng, 0.3);
    randomize(p.value_proj.bias, rng, 0.1);
    randomize(p.out_proj.weight, rng, 0.3);
    randomize(p.out_proj.bias, rng, 0.1);
    if (p.qk) {
        randomize(p.qk->q.weight, rng, 0.3);
        randomize(p.qk->q.bias, rng, 0.1);
        randomize(p.qk->k.weight, rng, 0.3);
        randomize(p.qk->k.bias, rng, 0.1);
    }
    if (p.static_conv) randomize(p.static_conv->kernel, rng);
    if (p.static_mlp) {
        if (p.static_mlp->mode == MlpAffinityMode::Dense) {
            randomize(p.static_mlp->dense, rng);
        } else {
            randomize(p.static_mlp->factor_left, rng);
            randomize(p.static_mlp->factor_right, rng);
        }
    }
    if (p.mix) {
        p.mix->alpha.value[0] = rng.uniform(0.2, 1.2);
        p.mix->beta.value[0] = rng.uniform(0.2, 1.2);
    }
}

// Random strictly-nonzero readout weights; probing y - x removes the
// residual's constant contribution, which would otherwise dominate the
// finite-difference noise floor.
inline Tensor<double> readout_weights(Shape shape, SplitRng& rng) {
    Tensor<double> w(std::move(shape));
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        w[i] = sign * rng.uniform(0.5, 1.5);
    }
    return w;
}

inline std::vector<Param<double>*> block_params(ContextBlockParams<double>& p) {
    std::vector<Param<double>*> out = {&p.pre_norm.gamma,   &p.pre_norm.beta,
                                       &p.value_proj.weight, &p.value_proj.bias,
                                       &p.out_proj.weight,   &p.out_proj.bias};
    if (p.qk) {
        out.push_back(&p.qk->q.weight);
        out.push_back(&p.qk->q.bias);
        out.push_back(&p.qk->k.weight);
        out.push_back(&p.qk->k.bias);
    }
    if (p.static_conv) out.push_back(&p.static_conv->kernel);
    if (p.static_mlp) {
        if (p.static_mlp->mode == MlpAffinityMode::Dense) {
            out.push_back(&p.static_mlp->dense);
        } else {
            out.push_back(&p.static_mlp->factor_left);
            out.push_back(&p.static_mlp->factor_right);
        }
    }
    if (p.mix) {
        out.push_back(&p.mix->alpha);
        out.push_back(&p.mix->beta);
    }
    return out;
}

inline char* fmt(char* buf, std::size_t n, const char* f, double v) {
    std::snprintf(buf, n, f, v);
    return buf;
}

}  // namespace detail

// Depthwise-conv equivalence: the conv affinity composed with aggregation
// must equal the 5-loop direct convolution, M = C, f64.
inline std::vector<CheckResult> run_conv_equiv_suite(std::uint64_t seed = 1) {
    std::vector<CheckResult> results;
    SplitRng rng = SplitRng(seed).fork("conv-equiv");
    const std::vector<std::pair<std::size_t, std::size_t>> grids = {{4, 4}, {5, 7}, {8, 8}};
    for (std::size_t k : {std::size_t{3}, std::size_t{5}}) {
        for (auto [h, w] : grids) {
            for (std::size_t c : {std::size_t{1}, std::size_t{4}}) {
                ConvAffinityParams<double> params(c, k, GridDims{h, w});
                detail::randomize(params.kernel, rng, 1.0);
                auto v = detail::random_tensor({h * w, c}, rng);
                auto out = aggregate(conv_affinity(params), constant(v));
                auto ref = oracle::direct_depthwise_conv(v.vec(), h, w, c,
                                                         params.kernel.value.vec(), k);
                double diff = 0.0;
                for (std::size_t i = 0; i < ref.size(); ++i)
                    diff = std::max(diff, std::abs(out->value[i] - ref[i]));
                char name[96], det[96];
                std::snprintf(name, sizeof(name), "conv-equiv k=%zu grid=%zux%zu C=%zu", k, h, w,
                              c);
                std::snprintf(det, sizeof(det), "max |diff| = %.3g (limit 1e-12)", diff);
                results.push_back({name, diff <= 1e-12, det});
            }
        }
    }
    return results;
}

// Attention equivalence: sa_affinity + aggregate vs. the loop oracle.
inline std::vector<CheckResult> run_attention_equiv_suite(std::uint64_t seed = 1,
                                                          std::size_t trials = 20) {
    std::vector<CheckResult> results;
    SplitRng rng = SplitRng(seed).fork("attn-equiv");
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t m = 1 + rng.uniform_int(3);
        const std::size_t hd = 1 + rng.uniform_int(4);
        const std::size_t c = m * hd;
        const std::size_t n = 2 + rng.uniform_int(6);
        auto x = detail::random_tensor({n, c}, rng);
        auto wq = detail::random_tensor({c, c}, rng);
        auto wk = detail::random_tensor({c, c}, rng);
        auto wv = detail::random_tensor({c, c}, rng);
        auto xn = constant(x);
        auto a = sa_affinity(heads_split(matmul(xn, constant(wq)), m),
                             heads_split(matmul(xn, constant(wk)), m));
        auto out = aggregate(a, matmul(xn, constant(wv)));
        auto ref = oracle::naive_attention(x.vec(), n, c, wq.vec(), wk.vec(), wv.vec(), m);
        for (std::size_t i = 0; i < ref.affinity.size(); ++i)
            worst = std::max(worst, std::abs(a.weights->value[i] - ref.affinity[i]));
        for (std::size_t i = 0; i < ref.out.size(); ++i)
            worst = std::max(worst, std::abs(out->value[i] - ref.out[i]));
    }
    char det[96];
    std::snprintf(det, sizeof(det), "max |diff| over %zu trials = %.3g (limit 1e-12)", trials,
                  worst);
    results.push_back({"attention-equiv vs naive oracle", worst <= 1e-12, det});
    return results;
}

// Finite-difference gradient checks for every block variant.
inline std::vector<CheckResult> run_grad_suite(std::uint64_t seed = 1, std::size_t seeds = 5) {
    std::vector<CheckResult> results;
    const GridDims grid{3, 3};
    const std::size_t n = grid.tokens();

    struct Variant {
        const char* name;
        AggregatorConfig cfg;
    };
    std::vector<Variant> variants;
    auto add_variant = [&](const char* name, AffinityKind kind, StaticKind stat,
                           std::size_t c, std::size_t heads, std::size_t reduction = 1) {
        AggregatorConfig cfg;
        cfg.channels = c;
        cfg.heads = heads;
        cfg.kind = kind;
        cfg.static_kind = stat;
        cfg.kernel_size = 3;
        cfg.reduction = reduction;
        variants.push_back({name, cfg});
    };
    add_variant("sa-block", AffinityKind::DynamicSA, StaticKind::None, 8, 2);
    add_variant("conv-block", AffinityKind::StaticConv, StaticKind::Conv, 6, 3);
    add_variant("mlp-dense-block", AffinityKind::StaticMlp, StaticKind::MlpDense, 6, 1);
    add_variant("mlp-lowrank-block", AffinityKind::StaticMlp, StaticKind::MlpLowRank, 6, 1, 3);
    add_variant("mixture-block", AffinityKind::Mixture, StaticKind::Conv, 8, 2);
    add_variant("pam-block", AffinityKind::Mixture, StaticKind::MlpDense, 8, 2);

    for (const auto& variant : variants) {
        double worst = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            SplitRng rng = SplitRng(seed + s).fork(variant.name);
            auto params = make_context_block<double>(variant.cfg, grid);
            detail::randomize_block(params, rng);
            auto x = detail::random_tensor({n, variant.cfg.channels}, rng);
            auto lw = detail::readout_weights({n, variant.cfg.channels}, rng);
            auto build = [&] {
                const bool pam = variant.cfg.static_kind == StaticKind::MlpDense &&
                                 variant.cfg.kind == AffinityKind::Mixture;
                auto y = pam ? pam_block_forward(constant(x), variant.cfg, params)
                             : context_block_forward(constant(x), variant.cfg, params);
                return sum_all(mul(add(y, scale(constant(x), -1.0)), constant(lw)));
            };
            worst = std::max(worst, max_rel_grad_err(detail::block_params(params), build));
        }
        char det[96];
        std::snprintf(det, sizeof(det), "max rel err over %zu seeds = %.3g (limit 1e-5)", seeds,
                      worst);
        results.push_back({std::string("grad ") + variant.name, worst <= 1e-5, det});
    }

    {
        double worst = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            SplitRng rng = SplitRng(seed + s).fork("ffn");
            FfnParams<double> params(6, 24);
            detail::randomize(params.expand.weight, rng, 0.3);
            detail::randomize(params.expand.bias, rng, 0.1);
            detail::randomize(params.contract.weight, rng, 0.3);
            detail::randomize(params.contract.bias, rng, 0.1);
            auto x = detail::random_tensor({5, 6}, rng);
            auto lw = detail::readout_weights({5, 6}, rng);
            auto build = [&] {
                auto y = ffn_forward(constant(x), params);
                return sum_all(mul(add(y, scale(constant(x), -1.0)), constant(lw)));
            };
            worst = std::max(
                worst, max_rel_grad_err({&params.expand.weight, &params.expand.bias,
                                         &params.contract.weight, &params.contract.bias,
                                         &params.pre_norm.gamma, &params.pre_norm.beta},
                                        build));
        }
        char det[96];
        std::snprintf(det, sizeof(det), "max rel err over %zu seeds = %.3g (limit 1e-5)", seeds,
                      worst);
        results.push_back({"grad ffn", worst <= 1e-5, det});
    }

    {
        double worst = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            SplitRng rng = SplitRng(seed + s).fork("patch-embed");
            PatchEmbedParams<double> params(2, 3, 6);
            detail::randomize(params.proj.weight, rng, 0.3);
            detail::randomize(params.proj.bias, rng, 0.1);
            auto x = detail::random_tensor({4, 4, 3}, rng);
            auto lw = detail::readout_weights({4, 6}, rng);
            auto build = [&] {
                return sum_all(mul(patch_embed(constant(x), params), constant(lw)));
            };
            worst = std::max(worst,
                             max_rel_grad_err({&params.proj.weight, &params.proj.bias,
                                               &params.norm.gamma, &params.norm.beta},
                                              build));
        }
        char det[96];
        std::snprintf(det, sizeof(det), "max rel err over %zu seeds = %.3g (limit 1e-5)", seeds,
                      worst);
        results.push_back({"grad patch-embed", worst <= 1e-5, det});
    }
    return results;
}

// Bit-exact degenerate-coefficient identities of the mixture block.
inline std::vector<CheckResult> run_mix_suite(std::uint64_t seed = 1) {
    std::vector<CheckResult> results;
    SplitRng rng = SplitRng(seed).fork("mix");
    const std::size_t c = 8, m = 2;
    const GridDims grid{3, 3};
    const std::size_t n = grid.tokens();

    AggregatorConfig cfg_sa;
    cfg_sa.channels = c;
    cfg_sa.heads = m;
    cfg_sa.kind = AffinityKind::DynamicSA;
    auto sa = make_context_block<double>(cfg_sa, grid);
    detail::randomize_block(sa, rng);

    auto share = [&](ContextBlockParams<double>& dst) {
        dst.pre_norm.gamma.value = sa.pre_norm.gamma.value;
        dst.pre_norm.beta.value = sa.pre_norm.beta.value;
        dst.value_proj.weight.value = sa.value_proj.weight.value;
        dst.value_proj.bias.value = sa.value_proj.bias.value;
        dst.out_proj.weight.value = sa.out_proj.weight.value;
        dst.out_proj.bias.value = sa.out_proj.bias.value;
        if (dst.qk) {
            dst.qk->q.weight.value = sa.qk->q.weight.value;
            dst.qk->q.bias.value = sa.qk->q.bias.value;
            dst.qk->k.weight.value = sa.qk->k.weight.value;
            dst.qk->k.bias.value = sa.qk->k.bias.value;
        }
    };

    auto x = detail::random_tensor({n, c}, rng);
    auto y_sa = context_block_forward(constant(x), cfg_sa, sa);

    AggregatorConfig cfg_mix;
    cfg_mix.channels = c;
    cfg_mix.heads = m;
    cfg_mix.kind = AffinityKind::Mixture;
    cfg_mix.static_kind = StaticKind::Conv;
    auto mixed = make_context_block<double>(cfg_mix, grid);
    share(mixed);
    detail::randomize(mixed.static_conv->kernel, rng, 1.0);

    {
        mixed.mix->alpha.value[0] = 1.0;
        mixed.mix->beta.value[0] = 0.0;
        auto y = context_block_forward(constant(x), cfg_mix, mixed);
        bool equal = true;
        for (std::size_t i = 0; i < x.numel(); ++i) equal = equal && y->value[i] == y_sa->value[i];
        results.push_back({"mixture(alpha=1,beta=0) == sa block (bit-exact)", equal,
                           equal ? "outputs identical" : "outputs differ"});
    }
    {
        AggregatorConfig cfg_conv;
        cfg_conv.channels = c;
        cfg_conv.heads = m;
        cfg_conv.kind = AffinityKind::StaticConv;
        cfg_conv.static_kind = StaticKind::Conv;
        auto conv = make_context_block<double>(cfg_conv, grid);
        share(conv);
        conv.static_conv->kernel.value = mixed.static_conv->kernel.value;
        mixed.mix->alpha.value[0] = 0.0;
        mixed.mix->beta.value[0] = 1.0;
        auto y = context_block_forward(constant(x), cfg_mix, mixed);
        auto y_conv = context_block_forward(constant(x), cfg_conv, conv);
        bool equal = true;
        for (std::size_t i = 0; i < x.numel(); ++i)
            equal = equal && y->value[i] == y_conv->value[i];
        results.push_back({"mixture(alpha=0,beta=1) == static block (bit-exact)", equal,
                           equal ? "outputs identical" : "outputs differ"});
    }
    {
        AggregatorConfig cfg_pam;
        cfg_pam.channels = c;
        cfg_pam.heads = m;
        cfg_pam.kind = AffinityKind::Mixture;
        cfg_pam.static_kind = StaticKind::MlpDense;
        auto pam = make_context_block<double>(cfg_pam, grid);
        share(pam);
        pam.mix->alpha.value[0] = 1.0;
        pam.mix->beta.value[0] = 1.0;  // static matrix is zero
        auto y = pam_block_forward(constant(x), cfg_pam, pam);
        bool equal = true;
        for (std::size_t i = 0; i < x.numel(); ++i) equal = equal && y->value[i] == y_sa->value[i];
        results.push_back({"pam with zero static matrix == sa block (bit-exact)", equal,
                           equal ? "outputs identical" : "outputs differ"});
    }
    return results;
}

inline std::vector<CheckResult> run_suite(const std::string& name, std::uint64_t seed = 1) {
    std::vector<CheckResult> results;
    auto append = [&](std::vector<CheckResult> r) {
        results.insert(results.end(), r.begin(), r.end());
    };
    if (name == "conv-equiv") {
        append(run_conv_equiv_suite(seed));
        append(run_attention_equiv_suite(seed));
    } else if (name == "grad") {
        append(run_grad_suite(seed));
    } else if (name == "mix") {
        append(run_mix_suite(seed));
    } else if (name == "all") {
        append(run_conv_equiv_suite(seed));
        append(run_attention_equiv_suite(seed));
        append(run_grad_suite(seed));
        append(run_mix_suite(seed));
    } else {
        throw ConfigError("unknown verify suite '" + name +
                          "'; valid suites: conv-equiv, grad, mix, all");
    }
    return results;
}

}  // namespace cak::verify
