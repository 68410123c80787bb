#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "cak/autodiff.hpp"
#include "cak/errors.hpp"
#include "cak/tensor.hpp"

// Affinity matrices: the per-head N x N weights that decide how each token
// aggregates every other token's value vector. Self-attention produces them
// dynamically from the input; depthwise convolution and transposed-MLP
// mixing are static parameter matrices; the container block mixes one of
// each with learnable coefficients.
namespace cak {

enum class Provenance { Dynamic, Static };

struct GridDims {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t tokens() const { return h * w; }
};

template <typename T>
struct AffinityMatrix {
    NodePtr<T> weights;  // [M, N, N]
    std::size_t heads = 0;
    std::size_t tokens = 0;
    Provenance provenance = Provenance::Static;
};

// Kernel parameters for the convolutional affinity. With heads == channel
// count this is exact depthwise convolution; fewer heads share kernel
// weights across the channels of a head (MH-DW).
template <typename T>
struct ConvAffinityParams {
    Param<T> kernel;  // [M, k, k]
    std::size_t kernel_size = 0;
    GridDims grid;
    std::size_t heads = 0;

    ConvAffinityParams() = default;
    ConvAffinityParams(std::size_t m, std::size_t k, GridDims g)
        : kernel(Tensor<T>(Shape{m, k, k})), kernel_size(k), grid(g), heads(m) {
        if (k % 2 == 0 || k == 0)
            throw ConfigError("conv affinity kernel size must be odd, got " + std::to_string(k));
        if (g.h == 0 || g.w == 0) throw ConfigError("conv affinity grid dims must be positive");
    }
};

enum class MlpAffinityMode { Dense, LowRank };

template <typename T>
struct MlpAffinityParams {
    MlpAffinityMode mode = MlpAffinityMode::Dense;
    Param<T> dense;            // [M, N, N] in dense mode
    Param<T> factor_left;      // [M, N, N/D] in low-rank mode
    Param<T> factor_right;     // [M, N/D, N]
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::size_t reduction = 1;

    MlpAffinityParams() = default;

    static MlpAffinityParams make_dense(std::size_t m, std::size_t n) {
        MlpAffinityParams p;
        p.mode = MlpAffinityMode::Dense;
        p.heads = m;
        p.tokens = n;
        p.dense = Param<T>(Tensor<T>(Shape{m, n, n}));
        return p;
    }

    static MlpAffinityParams make_lowrank(std::size_t m, std::size_t n, std::size_t d) {
        if (d == 0 || n % d != 0) {
            throw ConfigError("low-rank reduction " + std::to_string(d) +
                              " does not divide token count " + std::to_string(n));
        }
        MlpAffinityParams p;
        p.mode = MlpAffinityMode::LowRank;
        p.heads = m;
        p.tokens = n;
        p.reduction = d;
        p.factor_left = Param<T>(Tensor<T>(Shape{m, n, n / d}));
        p.factor_right = Param<T>(Tensor<T>(Shape{m, n / d, n}));
        return p;
    }
};

template <typename T>
struct MixCoeffs {
    Param<T> alpha;
    Param<T> beta;

    MixCoeffs() : alpha(Tensor<T>::scalar(T{1})), beta(Tensor<T>::scalar(T{1})) {}
    MixCoeffs(T a, T b) : alpha(Tensor<T>::scalar(a)), beta(Tensor<T>::scalar(b)) {}
};

// A_m = softmax(Q_m K_m^T / sqrt(C/M)), rows stochastic, per head.
template <typename T>
AffinityMatrix<T> sa_affinity(const NodePtr<T>& q, const NodePtr<T>& k) {
    const Shape& sq = q->value.shape();
    const Shape& sk = k->value.shape();
    if (sq.size() != 3 || sq != sk) {
        throw ShapeError("sa_affinity expects matching [M,N,hd] tensors, got " + shape_str(sq) +
                         " and " + shape_str(sk));
    }
    if (sq[2] == 0) throw ConfigError("sa_affinity head dim must be >= 1");
    const T inv_sqrt_hd = T{1} / std::sqrt(static_cast<T>(sq[2]));
    AffinityMatrix<T> a;
    a.heads = sq[0];
    a.tokens = sq[1];
    a.provenance = Provenance::Dynamic;
    a.weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_hd));
    return a;
}

// Materializes the kernel footprint as a dense [M, N, N] matrix:
// weights[m,i,j] = kernel[m, i_h-j_h+r, i_w-j_w+r] inside the k x k window
// around token i (zero padding, stride 1), 0 elsewhere.
template <typename T>
AffinityMatrix<T> conv_affinity(ConvAffinityParams<T>& params) {
    const std::size_t k = params.kernel_size;
    if (k % 2 == 0 || k == 0)
        throw ConfigError("conv affinity kernel size must be odd, got " + std::to_string(k));
    const std::size_t m = params.heads;
    const std::size_t h = params.grid.h, w = params.grid.w;
    if (h == 0 || w == 0) throw ConfigError("conv affinity grid dims must be positive");
    const std::size_t n = h * w;
    const long r = static_cast<long>(k - 1) / 2;

    auto kernel_node = leaf(params.kernel);
    Tensor<T> out(Shape{m, n, n});
    const T* ker = kernel_node->value.data();
    T* po = out.data();
    for (std::size_t head = 0; head < m; ++head)
        for (std::size_t ih = 0; ih < h; ++ih)
            for (std::size_t iw = 0; iw < w; ++iw) {
                const std::size_t i = ih * w + iw;
                for (std::size_t a = 0; a < k; ++a) {
                    const long jh = static_cast<long>(ih) - (static_cast<long>(a) - r);
                    if (jh < 0 || jh >= static_cast<long>(h)) continue;
                    for (std::size_t b = 0; b < k; ++b) {
                        const long jw = static_cast<long>(iw) - (static_cast<long>(b) - r);
                        if (jw < 0 || jw >= static_cast<long>(w)) continue;
                        const std::size_t j =
                            static_cast<std::size_t>(jh) * w + static_cast<std::size_t>(jw);
                        po[(head * n + i) * n + j] = ker[(head * k + a) * k + b];
                    }
                }
            }

    auto node = make_node<T>(std::move(out), {kernel_node}, "conv_affinity",
                             [m, n, h, w, k, r](Node<T>& self) {
                                 auto& kin = *self.inputs[0];
                                 T* dk = kin.grad.data();
                                 const T* g = self.grad.data();
                                 for (std::size_t head = 0; head < m; ++head)
                                     for (std::size_t ih = 0; ih < h; ++ih)
                                         for (std::size_t iw = 0; iw < w; ++iw) {
                                             const std::size_t i = ih * w + iw;
                                             for (std::size_t a = 0; a < k; ++a) {
                                                 const long jh = static_cast<long>(ih) -
                                                                 (static_cast<long>(a) - r);
                                                 if (jh < 0 || jh >= static_cast<long>(h)) continue;
                                                 for (std::size_t b = 0; b < k; ++b) {
                                                     const long jw = static_cast<long>(iw) -
                                                                     (static_cast<long>(b) - r);
                                                     if (jw < 0 || jw >= static_cast<long>(w))
                                                         continue;
                                                     const std::size_t j =
                                                         static_cast<std::size_t>(jh) * w +
                                                         static_cast<std::size_t>(jw);
                                                     dk[(head * k + a) * k + b] +=
                                                         g[(head * n + i) * n + j];
                                                 }
                                             }
                                         }
                             });
    AffinityMatrix<T> out_a;
    out_a.heads = m;
    out_a.tokens = n;
    out_a.provenance = Provenance::Static;
    out_a.weights = node;
    return out_a;
}

// A^mlp = (W_mlp)^T per head; low-rank mode multiplies the two factors first
// (no nonlinearity between them).
template <typename T>
AffinityMatrix<T> mlp_affinity(MlpAffinityParams<T>& params) {
    AffinityMatrix<T> a;
    a.heads = params.heads;
    a.tokens = params.tokens;
    a.provenance = Provenance::Static;
    if (params.mode == MlpAffinityMode::Dense) {
        a.weights = transpose(leaf(params.dense));
    } else {
        if (params.tokens % params.reduction != 0) {
            throw ConfigError("low-rank reduction " + std::to_string(params.reduction) +
                              " does not divide token count " + std::to_string(params.tokens));
        }
        a.weights = transpose(matmul(leaf(params.factor_left), leaf(params.factor_right)));
    }
    return a;
}

// weights = alpha * dynamic + beta * static. The mixing is linear; no softmax
// is applied after it.
template <typename T>
AffinityMatrix<T> mix_affinity(MixCoeffs<T>& coeffs, const AffinityMatrix<T>& dynamic,
                               const AffinityMatrix<T>& static_a) {
    if (dynamic.heads != static_a.heads || dynamic.tokens != static_a.tokens) {
        throw ShapeError("mix_affinity head/token mismatch: [" + std::to_string(dynamic.heads) +
                         "," + std::to_string(dynamic.tokens) + "] vs [" +
                         std::to_string(static_a.heads) + "," + std::to_string(static_a.tokens) +
                         "]");
    }
    AffinityMatrix<T> a;
    a.heads = dynamic.heads;
    a.tokens = dynamic.tokens;
    a.provenance = Provenance::Dynamic;
    a.weights = add(mul(leaf(coeffs.alpha), dynamic.weights),
                    mul(leaf(coeffs.beta), static_a.weights));
    return a;
}

// Y_m = A_m V_m per head, concatenated across heads. Purely spatial: no
// cross-channel mixing and no nonlinearity.
template <typename T>
NodePtr<T> aggregate(const AffinityMatrix<T>& a, const NodePtr<T>& v) {
    const Shape& sv = v->value.shape();
    if (sv.size() != 2) throw ShapeError("aggregate expects V as [N,C], got " + shape_str(sv));
    if (sv[1] % a.heads != 0) {
        throw ConfigError("channel count " + std::to_string(sv[1]) +
                          " not divisible by head count " + std::to_string(a.heads));
    }
    if (sv[0] != a.tokens) {
        throw ShapeError("aggregate token mismatch: affinity has " + std::to_string(a.tokens) +
                         " tokens, V has " + std::to_string(sv[0]));
    }
    return heads_join(matmul(a.weights, heads_split(v, a.heads)));
}

}  // namespace cak
