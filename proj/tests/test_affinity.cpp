#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cak/affinity.hpp"
#include "cak/autodiff.hpp"
#include "cak/oracle.hpp"
#include "cak/rng.hpp"
#include "grad_check.hpp"

using namespace cak;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, SplitRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double conv_equivalence_diff(std::size_t h, std::size_t w, std::size_t c, std::size_t k,
                             SplitRng& rng) {
    GridDims grid{h, w};
    const std::size_t n = h * w;
    ConvAffinityParams<T> params(c, k, grid);  // M = C: exact depthwise conv
    for (std::size_t i = 0; i < params.kernel.numel(); ++i)
        params.kernel.value[i] = static_cast<T>(rng.uniform(-1, 1));

    Tensor<T> v = random_tensor<T>({n, c}, rng);
    auto a = conv_affinity(params);
    auto out = aggregate(a, constant(v));

    std::vector<double> grid_data(n * c), kernel_data(c * k * k);
    for (std::size_t i = 0; i < grid_data.size(); ++i) grid_data[i] = static_cast<double>(v[i]);
    for (std::size_t i = 0; i < kernel_data.size(); ++i)
        kernel_data[i] = static_cast<double>(params.kernel.value[i]);
    auto ref = oracle::direct_depthwise_conv(grid_data, h, w, c, kernel_data, k);

    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(out->value[i]) - ref[i]));
    return worst;
}

}  // namespace

TEST_CASE("sa_affinity on a single token is exactly one") {
    auto q = constant(Tensor<double>({1, 1, 3}, {0.3, -0.7, 2.0}));
    auto a = sa_affinity(q, q);
    REQUIRE(a.weights->value.numel() == 1);
    REQUIRE(a.weights->value[0] == 1.0);
    REQUIRE(a.provenance == Provenance::Dynamic);
}

TEST_CASE("sa_affinity with zero projections is uniform") {
    auto q = constant(Tensor<double>({1, 4, 2}));
    auto a = sa_affinity(q, q);
    for (std::size_t i = 0; i < 16; ++i) REQUIRE(a.weights->value[i] == 0.25);
}

TEST_CASE("sa_affinity rejects zero head dim and mismatched shapes") {
    REQUIRE_THROWS_AS(sa_affinity(constant(Tensor<double>({1, 2, 0})),
                                  constant(Tensor<double>({1, 2, 0}))),
                      ConfigError);
    REQUIRE_THROWS_AS(sa_affinity(constant(Tensor<double>({1, 2, 3})),
                                  constant(Tensor<double>({1, 3, 3}))),
                      ShapeError);
}

TEST_CASE("sa_affinity and aggregate match the naive attention oracle") {
    SplitRng rng(101);
    const std::size_t n = 3, c = 8, m = 2;
    for (int trial = 0; trial < 25; ++trial) {
        auto x = random_tensor<double>({n, c}, rng);
        auto wq = random_tensor<double>({c, c}, rng);
        auto wk = random_tensor<double>({c, c}, rng);
        auto wv = random_tensor<double>({c, c}, rng);

        auto xn = constant(x);
        auto q = heads_split(matmul(xn, constant(wq)), m);
        auto k = heads_split(matmul(xn, constant(wk)), m);
        auto v = matmul(xn, constant(wv));
        auto a = sa_affinity(q, k);
        auto out = aggregate(a, v);

        auto ref = oracle::naive_attention(x.vec(), n, c, wq.vec(), wk.vec(), wv.vec(), m);
        for (std::size_t i = 0; i < ref.affinity.size(); ++i)
            REQUIRE(std::abs(a.weights->value[i] - ref.affinity[i]) <= 1e-12);
        for (std::size_t i = 0; i < ref.out.size(); ++i)
            REQUIRE(std::abs(out->value[i] - ref.out[i]) <= 1e-12);

        for (std::size_t head = 0; head < m; ++head)
            for (std::size_t row = 0; row < n; ++row) {
                double sum = 0.0;
                for (std::size_t col = 0; col < n; ++col)
                    sum += a.weights->value.at(head, row, col);
                REQUIRE(std::abs(sum - 1.0) <= 1e-6);
            }
    }
}

TEST_CASE("conv_affinity with a delta kernel is the identity") {
    GridDims grid{3, 3};
    ConvAffinityParams<double> params(2, 3, grid);
    params.kernel.value.at(0, 1, 1) = 1.0;
    params.kernel.value.at(1, 1, 1) = 1.0;
    auto a = conv_affinity(params);
    REQUIRE(a.provenance == Provenance::Static);
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j)
                REQUIRE(a.weights->value.at(m, i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("conv_affinity all-ones kernel on a 2x2 grid fills the matrix") {
    GridDims grid{2, 2};
    ConvAffinityParams<double> params(1, 3, grid);
    for (std::size_t i = 0; i < 9; ++i) params.kernel.value[i] = 1.0;
    auto a = conv_affinity(params);
    for (std::size_t i = 0; i < 16; ++i) REQUIRE(a.weights->value[i] == 1.0);
}

TEST_CASE("conv_affinity rejects even kernels") {
    REQUIRE_THROWS_AS(ConvAffinityParams<double>(1, 4, GridDims{3, 3}), ConfigError);
    REQUIRE_THROWS_AS(ConvAffinityParams<double>(1, 3, GridDims{0, 3}), ConfigError);
}

TEST_CASE("conv affinity composed with aggregate equals direct depthwise conv") {
    SplitRng rng(202);
    for (std::size_t k : {std::size_t{3}, std::size_t{5}}) {
        REQUIRE(conv_equivalence_diff<double>(4, 4, 1, k, rng) <= 1e-12);
        REQUIRE(conv_equivalence_diff<double>(4, 4, 4, k, rng) <= 1e-12);
        REQUIRE(conv_equivalence_diff<double>(5, 7, 4, k, rng) <= 1e-12);
    }
    REQUIRE(conv_equivalence_diff<float>(5, 7, 4, 3, rng) <= 1e-5);
}

TEST_CASE("conv_affinity rows have at most k*k nonzeros") {
    SplitRng rng(203);
    ConvAffinityParams<double> params(2, 3, GridDims{4, 5});
    for (std::size_t i = 0; i < params.kernel.numel(); ++i)
        params.kernel.value[i] = rng.uniform(0.5, 1.0);
    auto a = conv_affinity(params);
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < 20; ++i) {
            std::size_t nz = 0;
            for (std::size_t j = 0; j < 20; ++j)
                if (a.weights->value.at(m, i, j) != 0.0) ++nz;
            REQUIRE(nz <= 9);
        }
}

TEST_CASE("mlp_affinity dense mode transposes the weight") {
    auto p = MlpAffinityParams<double>::make_dense(1, 2);
    p.dense.value = Tensor<double>({1, 2, 2}, {1, 2, 3, 4});
    auto a = mlp_affinity(p);
    REQUIRE(a.weights->value.at(0, 0, 0) == 1.0);
    REQUIRE(a.weights->value.at(0, 0, 1) == 3.0);
    REQUIRE(a.weights->value.at(0, 1, 0) == 2.0);
    REQUIRE(a.weights->value.at(0, 1, 1) == 4.0);

    auto pi = MlpAffinityParams<double>::make_dense(1, 3);
    for (std::size_t i = 0; i < 3; ++i) pi.dense.value.at(0, i, i) = 1.0;
    auto ai = mlp_affinity(pi);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE(ai.weights->value.at(0, i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("mlp_affinity low-rank mode matches product-then-transpose") {
    SplitRng rng(301);
    auto p = MlpAffinityParams<double>::make_lowrank(2, 4, 2);
    for (std::size_t i = 0; i < p.factor_left.numel(); ++i)
        p.factor_left.value[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < p.factor_right.numel(); ++i)
        p.factor_right.value[i] = rng.uniform(-1, 1);
    auto a = mlp_affinity(p);
    for (std::size_t m = 0; m < 2; ++m) {
        std::vector<double> l(p.factor_left.value.vec().begin() + m * 8,
                              p.factor_left.value.vec().begin() + (m + 1) * 8);
        std::vector<double> r(p.factor_right.value.vec().begin() + m * 8,
                              p.factor_right.value.vec().begin() + (m + 1) * 8);
        auto prod = oracle::matmul_ref(l, r, 4, 2, 4);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                REQUIRE(std::abs(a.weights->value.at(m, i, j) - prod[j * 4 + i]) <= 1e-12);
    }
}

TEST_CASE("mlp_affinity rejects non-integral reduction") {
    REQUIRE_THROWS_AS(MlpAffinityParams<double>::make_lowrank(1, 5, 2), ConfigError);
}

TEST_CASE("mix_affinity degenerate coefficients are bit-exact") {
    SplitRng rng(401);
    auto dyn_w = random_tensor<double>({2, 3, 3}, rng, 0.0, 1.0);
    auto stat_w = random_tensor<double>({2, 3, 3}, rng);
    AffinityMatrix<double> dyn{constant(dyn_w), 2, 3, Provenance::Dynamic};
    AffinityMatrix<double> stat{constant(stat_w), 2, 3, Provenance::Static};

    MixCoeffs<double> pure_dyn(1.0, 0.0);
    auto a1 = mix_affinity(pure_dyn, dyn, stat);
    for (std::size_t i = 0; i < 18; ++i) REQUIRE(a1.weights->value[i] == dyn_w[i]);

    MixCoeffs<double> pure_stat(0.0, 1.0);
    auto a2 = mix_affinity(pure_stat, dyn, stat);
    for (std::size_t i = 0; i < 18; ++i) REQUIRE(a2.weights->value[i] == stat_w[i]);
}

TEST_CASE("mix_affinity combines linearly") {
    AffinityMatrix<double> ident{constant(Tensor<double>({1, 2, 2}, {1, 0, 0, 1})), 1, 2,
                                 Provenance::Dynamic};
    AffinityMatrix<double> ones{constant(Tensor<double>({1, 2, 2}, {1, 1, 1, 1})), 1, 2,
                                Provenance::Static};
    MixCoeffs<double> half(0.5, 0.5);
    auto a = mix_affinity(half, ident, ones);
    REQUIRE(a.weights->value[0] == 1.0);
    REQUIRE(a.weights->value[1] == 0.5);
    REQUIRE(a.weights->value[2] == 0.5);
    REQUIRE(a.weights->value[3] == 1.0);
}

TEST_CASE("mix_affinity rejects mismatched inputs") {
    AffinityMatrix<double> a{constant(Tensor<double>({1, 2, 2})), 1, 2, Provenance::Dynamic};
    AffinityMatrix<double> b{constant(Tensor<double>({2, 2, 2})), 2, 2, Provenance::Static};
    MixCoeffs<double> c;
    REQUIRE_THROWS_AS(mix_affinity(c, a, b), ShapeError);
}

TEST_CASE("aggregate with identity affinity returns V") {
    SplitRng rng(501);
    auto v = random_tensor<double>({4, 6}, rng);
    Tensor<double> w({2, 4, 4});
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < 4; ++i) w.at(m, i, i) = 1.0;
    AffinityMatrix<double> a{constant(w), 2, 4, Provenance::Static};
    auto out = aggregate(a, constant(v));
    for (std::size_t i = 0; i < v.numel(); ++i) REQUIRE(out->value[i] == v[i]);
}

TEST_CASE("aggregate with row-uniform affinity averages tokens") {
    SplitRng rng(502);
    auto v = random_tensor<double>({5, 3}, rng);
    AffinityMatrix<double> a{constant(Tensor<double>({1, 5, 5}, 1.0 / 5)), 1, 5,
                             Provenance::Static};
    auto out = aggregate(a, constant(v));
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 5; ++i) mean += v.at(i, j);
        mean /= 5.0;
        for (std::size_t i = 0; i < 5; ++i)
            REQUIRE(out->value.at(i, j) == Catch::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("aggregate matches a per-head loop") {
    SplitRng rng(503);
    const std::size_t m = 2, n = 3, c = 4, hd = c / m;
    auto w = random_tensor<double>({m, n, n}, rng);
    auto v = random_tensor<double>({n, c}, rng);
    AffinityMatrix<double> a{constant(w), m, n, Provenance::Static};
    auto out = aggregate(a, constant(v));
    for (std::size_t head = 0; head < m; ++head)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < hd; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += w.at(head, i, j) * v.at(j, head * hd + d);
                REQUIRE(std::abs(out->value.at(i, head * hd + d) - acc) <= 1e-12);
            }
}

TEST_CASE("aggregate rejects indivisible channels") {
    AffinityMatrix<double> a{constant(Tensor<double>({2, 3, 3})), 2, 3, Provenance::Static};
    REQUIRE_THROWS_AS(aggregate(a, constant(Tensor<double>({3, 5}))), ConfigError);
}

TEST_CASE("aggregate is covariant under token permutation") {
    SplitRng rng(601);
    const std::size_t m = 2, n = 6, c = 4;
    for (int trial = 0; trial < 10; ++trial) {
        auto w = random_tensor<double>({m, n, n}, rng);
        auto v = random_tensor<double>({n, c}, rng);

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

        Tensor<double> wp({m, n, n});
        Tensor<double> vp({n, c});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) vp.at(i, j) = v.at(perm[i], j);
        for (std::size_t h = 0; h < m; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) wp.at(h, i, j) = w.at(h, perm[i], perm[j]);

        AffinityMatrix<double> a{constant(w), m, n, Provenance::Static};
        AffinityMatrix<double> ap{constant(wp), m, n, Provenance::Static};
        auto out = aggregate(a, constant(v));
        auto outp = aggregate(ap, constant(vp));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
                REQUIRE(outp->value.at(i, j) == Catch::Approx(out->value.at(perm[i], j)).margin(1e-13));
    }
}

TEST_CASE("affinity constructions pass the finite-difference gradient check") {
    SplitRng rng(701);
    const std::size_t n = 9, c = 6, m = 2;

    SECTION("self-attention path") {
        Param<double> wq(random_tensor<double>({c, c}, rng, -0.5, 0.5));
        Param<double> wk(random_tensor<double>({c, c}, rng, -0.5, 0.5));
        Param<double> wv(random_tensor<double>({c, c}, rng, -0.5, 0.5));
        auto x = random_tensor<double>({n, c}, rng);
        auto build = [&] {
            auto xn = constant(x);
            auto a = sa_affinity(heads_split(matmul(xn, leaf(wq)), m),
                                 heads_split(matmul(xn, leaf(wk)), m));
            return mean_all(gelu(aggregate(a, matmul(xn, leaf(wv)))));
        };
        REQUIRE(testutil::max_rel_grad_err({&wq, &wk, &wv}, build) <= 1e-5);
    }

    SECTION("conv kernel") {
        ConvAffinityParams<double> params(m, 3, GridDims{3, 3});
        for (std::size_t i = 0; i < params.kernel.numel(); ++i)
            params.kernel.value[i] = rng.uniform(-1, 1);
        auto v = random_tensor<double>({n, c}, rng);
        auto build = [&] {
            return mean_all(gelu(aggregate(conv_affinity(params), constant(v))));
        };
        REQUIRE(testutil::max_rel_grad_err({&params.kernel}, build) <= 1e-5);
    }

    SECTION("mlp factors and mix coefficients") {
        auto p = MlpAffinityParams<double>::make_lowrank(m, n, 3);
        for (std::size_t i = 0; i < p.factor_left.numel(); ++i)
            p.factor_left.value[i] = rng.uniform(-1, 1);
        for (std::size_t i = 0; i < p.factor_right.numel(); ++i)
            p.factor_right.value[i] = rng.uniform(-1, 1);
        MixCoeffs<double> mix(0.7, 0.4);
        auto qk = random_tensor<double>({m, n, 3}, rng);
        auto v = random_tensor<double>({n, c}, rng);
        auto build = [&] {
            auto dyn = sa_affinity(constant(qk), constant(qk));
            auto mixed = mix_affinity(mix, dyn, mlp_affinity(p));
            return mean_all(gelu(aggregate(mixed, constant(v))));
        };
        double err = testutil::max_rel_grad_err(
            {&p.factor_left, &p.factor_right, &mix.alpha, &mix.beta}, build);
        REQUIRE(err <= 1e-5);
        REQUIRE(std::abs(mix.alpha.grad[0]) > 0.0);
        REQUIRE(std::abs(mix.beta.grad[0]) > 0.0);
    }
}
