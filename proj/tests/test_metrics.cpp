#include <catch2/catch_amalgamated.hpp>

#include "cak/metrics.hpp"

using namespace cak;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.num_classes = 4;
    cfg.preset = "tiny";
    for (std::size_t s = 0; s < 4; ++s) {
        StageConfig& st = cfg.stages[s];
        st.depth = 1;
        st.dim = 8;
        st.patch = s == 0 ? 2 : (s == 1 ? 2 : 1);
        st.head_dim = 4;
        st.kind = s < 3 ? AffinityKind::StaticConv : AffinityKind::Mixture;
        st.static_kind = StaticKind::Conv;
    }
    return cfg;
}

}  // namespace

TEST_CASE("a single linear layer counts Cin*Cout + Cout parameters") {
    LinearParams<float> lin(7, 9);
    REQUIRE(lin.weight.numel() + lin.bias.numel() == 7 * 9 + 9);
}

TEST_CASE("param count equals the sum of registry element counts") {
    auto net = Network<float>::build(tiny_config(), 1);
    std::size_t total = 0;
    for (const auto& e : net.registry()) total += e.param->numel();
    REQUIRE(count_params(net) == total);
}

TEST_CASE("flop breakdown sums to the totals") {
    auto net = Network<float>::build(tiny_config(), 1);
    auto report = count_flops(net, 16);
    std::uint64_t params = 0, flops = 0, dyn = 0;
    for (const auto& s : report.stages) {
        params += s.params;
        flops += s.flops;
        dyn += s.dynamic_flops;
    }
    REQUIRE(params == report.params);
    REQUIRE(flops == report.flops);
    REQUIRE(dyn == report.dynamic_flops);
    REQUIRE(report.params == count_params(net));
    REQUIRE(report.flops > 0);
}

TEST_CASE("container-light reports zero dynamic flops in stages 1-3") {
    auto net = Network<float>::build(preset("container-light"), 1);
    auto report = count_flops(net, 224);
    REQUIRE(report.stages[0].dynamic_flops == 0);
    REQUIRE(report.stages[1].dynamic_flops == 0);
    REQUIRE(report.stages[2].dynamic_flops == 0);
    REQUIRE(report.stages[3].dynamic_flops > 0);

    auto container = Network<float>::build(preset("container"), 1);
    auto full = count_flops(container, 224);
    for (std::size_t s = 0; s < 4; ++s) REQUIRE(full.stages[s].dynamic_flops > 0);
    REQUIRE(full.flops > report.flops);
    REQUIRE(count_params(container) > count_params(net));
}

TEST_CASE("flop counting validates the resolution") {
    auto net = Network<float>::build(tiny_config(), 1);
    REQUIRE_THROWS_AS(count_flops(net, 15), ConfigError);
    REQUIRE_THROWS_AS(count_flops(net, 0), ConfigError);
}

TEST_CASE("cost report serializes as stage,params,flops,dynamic_flops CSV") {
    auto net = Network<float>::build(tiny_config(), 1);
    auto report = count_flops(net, 16);
    const std::string csv = cost_report_csv(report);
    REQUIRE(csv.rfind("stage,params,flops,dynamic_flops\n", 0) == 0);
    REQUIRE(csv.find("\n1,") != std::string::npos);
    REQUIRE(csv.find("\nhead,") != std::string::npos);
}

TEST_CASE("throughput bench returns a positive finite rate") {
    auto net = Network<float>::build(tiny_config(), 1);
    auto r = bench_throughput(net, 1, 1);
    REQUIRE(r.images_per_sec > 0.0);
    REQUIRE(std::isfinite(r.images_per_sec));
    REQUIRE(r.batch == 1);

    auto r2 = bench_throughput(net, 2, 1);
    REQUIRE(r2.images_per_sec > r.images_per_sec / 10.0);

    REQUIRE_THROWS_AS(bench_throughput(net, 0, 1), ConfigError);
    REQUIRE_THROWS_AS(bench_throughput(net, 1, 0), ConfigError);
}

TEST_CASE("the light variant is faster than the full mixture at equal settings") {
    auto container = Network<float>::build(preset("container-mini"), 1);
    auto light = Network<float>::build(preset("container-light-mini"), 1);
    auto rc = bench_throughput(container, 2, 3);
    auto rl = bench_throughput(light, 2, 3);
    REQUIRE(rl.images_per_sec > rc.images_per_sec);
}
