#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "cak/network.hpp"
#include "cak/rng.hpp"

// Analytic cost accounting. FLOPs use the 2 x multiply-accumulate
// convention; norms, activations and softmax are excluded. Static conv
// aggregation is charged at its sparse operator cost (2*N*k^2*C) even though
// the affinity matrix is stored densely, and low-rank MLP aggregation at its
// factored cost; a mixture block pays the full dynamic price (QK^T plus AV,
// 4*N^2*C) and nothing extra for the static matrix it mixes in.
namespace cak {

struct StageCost {
    std::string stage;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t dynamic_flops = 0;
};

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t dynamic_flops = 0;
    std::vector<StageCost> stages;
};

template <typename T>
std::size_t count_params(const Network<T>& net) {
    return net.param_count();
}

template <typename T>
CostReport count_flops(const Network<T>& net, std::size_t resolution) {
    const NetworkConfig& cfg = net.config();
    if (resolution == 0) throw ConfigError("resolution must be positive");

    CostReport report;
    std::size_t h = resolution, w = resolution;
    std::size_t c_in = cfg.input_channels;
    for (std::size_t s = 0; s < 4; ++s) {
        const StageConfig& sc = cfg.stages[s];
        if (h % sc.patch != 0 || w % sc.patch != 0) {
            throw ConfigError("stage " + std::to_string(s + 1) + ": resolution " +
                              std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by patch " + std::to_string(sc.patch));
        }
        h /= sc.patch;
        w /= sc.patch;
        const std::uint64_t n = h * w;
        const std::uint64_t c = sc.dim;

        StageCost cost;
        cost.stage = std::to_string(s + 1);
        // patch embedding projection
        cost.flops += 2 * n * (sc.patch * sc.patch * c_in) * c;

        const bool dynamic = sc.kind == AffinityKind::DynamicSA || sc.kind == AffinityKind::Mixture;
        std::uint64_t per_block = 0;
        std::uint64_t per_block_dynamic = 0;
        per_block += 2 * 2 * n * c * c;  // value + out projections
        if (dynamic) {
            per_block += 2 * 2 * n * c * c;  // q + k projections
            per_block_dynamic += 4 * n * n * c;
        } else if (sc.kind == AffinityKind::StaticConv) {
            per_block += 2 * n * sc.kernel_size * sc.kernel_size * c;
        } else if (sc.static_kind == StaticKind::MlpDense) {
            per_block += 2 * n * n * c;
        } else if (sc.static_kind == StaticKind::MlpLowRank) {
            per_block += 4 * n * n * c / sc.reduction;
        }
        per_block += 2 * 2 * n * c * (cfg.ffn_ratio * c);  // 2-layer MLP fusion
        cost.flops += sc.depth * (per_block + per_block_dynamic);
        cost.dynamic_flops = sc.depth * per_block_dynamic;

        report.stages.push_back(cost);
        c_in = sc.dim;
    }

    StageCost head;
    head.stage = "head";
    head.flops = 2 * static_cast<std::uint64_t>(cfg.stages[3].dim) * cfg.num_classes;
    report.stages.push_back(head);

    // parameters attributed by registry name prefix so the breakdown sums to
    // the registry total exactly
    for (const auto& e : net.registry()) {
        bool placed = false;
        for (std::size_t s = 0; s < 4; ++s) {
            if (e.name.rfind("stage" + std::to_string(s + 1) + ".", 0) == 0) {
                report.stages[s].params += e.param->numel();
                placed = true;
                break;
            }
        }
        if (!placed) report.stages.back().params += e.param->numel();
    }

    for (const auto& sc : report.stages) {
        report.params += sc.params;
        report.flops += sc.flops;
        report.dynamic_flops += sc.dynamic_flops;
    }
    return report;
}

inline std::string cost_report_csv(const CostReport& report) {
    std::ostringstream os;
    os << "stage,params,flops,dynamic_flops\n";
    for (const auto& s : report.stages)
        os << s.stage << ',' << s.params << ',' << s.flops << ',' << s.dynamic_flops << '\n';
    return os.str();
}

struct ThroughputResult {
    double images_per_sec = 0.0;
    std::size_t batch = 0;
    std::size_t repetitions = 0;
    int workers = 1;
    Dtype dtype = Dtype::f32;
};

// Median images/second over `repetitions` timed forward passes of one random
// batch, after a single warmup pass.
template <typename T>
ThroughputResult bench_throughput(Network<T>& net, std::size_t batch, std::size_t repetitions,
                                  int workers = 1, std::uint64_t seed = 0) {
    if (batch == 0) throw ConfigError("bench batch size must be positive");
    if (repetitions == 0) throw ConfigError("bench repetitions must be positive");
    const NetworkConfig& cfg = net.config();
    SplitRng rng = SplitRng(seed).fork("bench");
    Tensor<T> images(Shape{batch, cfg.input_channels, cfg.input_h, cfg.input_w});
    for (std::size_t i = 0; i < images.numel(); ++i)
        images[i] = static_cast<T>(rng.uniform(0.0, 1.0));

    net.forward(images, workers);  // warmup
    std::vector<double> rates;
    rates.reserve(repetitions);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        net.forward(images, workers);
        const auto t1 = std::chrono::steady_clock::now();
        const double sec = std::chrono::duration<double>(t1 - t0).count();
        rates.push_back(static_cast<double>(batch) / sec);
    }
    std::sort(rates.begin(), rates.end());
    ThroughputResult r;
    r.images_per_sec = rates[rates.size() / 2];
    r.batch = batch;
    r.repetitions = repetitions;
    r.workers = workers;
    r.dtype = dtype_of<T>();
    return r;
}

}  // namespace cak
