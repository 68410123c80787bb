#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cak/errors.hpp"
#include "cak/tensor.hpp"

namespace cak {

// Trainable leaf. grad always has the same shape as value and accumulates
// across backward calls until zero_grad().
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = true;

    Param() = default;
    explicit Param(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

    std::size_t numel() const { return value.numel(); }
    void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T{0}); }
};

// One record of the dynamic computation graph. Saved intermediates live in
// the backward closure; `param` binds leaf nodes to their Param so backward
// can accumulate d(loss)/d(param).
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward;
    const char* op = "";
    Param<T>* param = nullptr;
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_node(Tensor<T> value, std::vector<NodePtr<T>> inputs, const char* op,
                     std::function<void(Node<T>&)> bwd) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
    n->inputs = std::move(inputs);
    if (n->requires_grad) n->backward = std::move(bwd);
    return n;
}

template <typename T>
NodePtr<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = "const";
    return n;
}

template <typename T>
NodePtr<T> leaf(Param<T>& p) {
    auto n = std::make_shared<Node<T>>();
    n->value = p.value;
    n->op = "leaf";
    n->requires_grad = p.requires_grad;
    n->param = &p;
    return n;
}

// ---------------------------------------------------------------------------
// Raw kernels (accumulating). Row-major throughout.

namespace detail {

// C[p,r] += A[p,q] * B[q,r]
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        T* crow = c + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = a[i * q + k];
            const T* brow = b + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[p,r] += A^T * B with A stored [q,p]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t k = 0; k < q; ++k) {
        const T* arow = a + k * p;
        const T* brow = b + k * r;
        for (std::size_t i = 0; i < p; ++i) {
            const T aki = arow[i];
            T* crow = c + i * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
        }
    }
}

// C[p,r] += A * B^T with B stored [r,q]
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* arow = a + i * q;
        T* crow = c + i * r;
        for (std::size_t j = 0; j < r; ++j) {
            const T* brow = b + j * q;
            T acc{0};
            for (std::size_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

inline void check_same_rank3_batch(const Shape& a, const Shape& b) {
    if (a[0] != b[0]) {
        throw ShapeError("batched matmul batch extents differ: " + shape_str(a) + " vs " +
                         shape_str(b));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Each returns a fresh node; operands are never mutated.

// Matrix product. Supports [p,q]x[q,r] and batched [B,p,q]x[B,q,r].
template <typename T>
NodePtr<T> matmul(const NodePtr<T>& a, const NodePtr<T>& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if ((sa.size() != 2 && sa.size() != 3) || sa.size() != sb.size()) {
        throw ShapeError("matmul expects two 2-d or two 3-d tensors, got " + shape_str(sa) +
                         " and " + shape_str(sb));
    }
    const bool batched = sa.size() == 3;
    if (batched) detail::check_same_rank3_batch(sa, sb);
    const std::size_t nb = batched ? sa[0] : 1;
    const std::size_t p = sa[batched ? 1 : 0];
    const std::size_t q = sa[batched ? 2 : 1];
    const std::size_t q2 = sb[batched ? 1 : 0];
    const std::size_t r = sb[batched ? 2 : 1];
    if (q != q2) {
        throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    }

    Shape out_shape = batched ? Shape{nb, p, r} : Shape{p, r};
    Tensor<T> out(out_shape);
    for (std::size_t m = 0; m < nb; ++m) {
        detail::gemm_nn_acc(a->value.data() + m * p * q, b->value.data() + m * q * r,
                            out.data() + m * p * r, p, q, r);
    }

    return make_node<T>(std::move(out), {a, b}, "matmul", [nb, p, q, r](Node<T>& self) {
        const auto& a_in = self.inputs[0];
        const auto& b_in = self.inputs[1];
        for (std::size_t m = 0; m < nb; ++m) {
            const T* g = self.grad.data() + m * p * r;
            if (a_in->requires_grad) {
                // dA = dC * B^T
                detail::gemm_nt_acc(g, b_in->value.data() + m * q * r,
                                    a_in->grad.data() + m * p * q, p, r, q);
            }
            if (b_in->requires_grad) {
                // dB = A^T * dC
                detail::gemm_tn_acc(a_in->value.data() + m * p * q, g,
                                    b_in->grad.data() + m * q * r, q, p, r);
            }
        }
    });
}

// Swap the last two axes of a 2-d or 3-d tensor.
template <typename T>
NodePtr<T> transpose(const NodePtr<T>& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 2 && s.size() != 3) {
        throw ShapeError("transpose expects a 2-d or 3-d tensor, got " + shape_str(s));
    }
    const bool batched = s.size() == 3;
    const std::size_t nb = batched ? s[0] : 1;
    const std::size_t p = s[batched ? 1 : 0];
    const std::size_t q = s[batched ? 2 : 1];
    Shape out_shape = batched ? Shape{nb, q, p} : Shape{q, p};
    Tensor<T> out(out_shape);
    for (std::size_t m = 0; m < nb; ++m) {
        const T* src = a->value.data() + m * p * q;
        T* dst = out.data() + m * p * q;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
    }
    return make_node<T>(std::move(out), {a}, "transpose", [nb, p, q](Node<T>& self) {
        auto& in = *self.inputs[0];
        for (std::size_t m = 0; m < nb; ++m) {
            const T* g = self.grad.data() + m * p * q;
            T* dst = in.grad.data() + m * p * q;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) dst[i * q + j] += g[j * p + i];
        }
    });
}

template <typename T>
NodePtr<T> reshape(const NodePtr<T>& a, Shape shape) {
    if (shape_numel(shape) != a->value.numel()) {
        throw ShapeError("reshape from " + shape_str(a->value.shape()) + " to " +
                         shape_str(shape) + " changes element count");
    }
    Tensor<T> out(std::move(shape), a->value.vec());
    return make_node<T>(std::move(out), {a}, "reshape", [](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        T* dst = in.grad.data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) dst[i] += g[i];
    });
}

// Elementwise sum. b may have the same shape as a, be a trailing-axes
// broadcast (e.g. a bias of shape [C] added to [N,C]), or be a scalar [1].
template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    const std::size_t na = a->value.numel();
    const std::size_t nbn = b->value.numel();
    const bool scalar_b = nbn == 1;
    bool suffix = false;
    if (!scalar_b && sa != sb) {
        suffix = sb.size() < sa.size() &&
                 std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()));
        if (!suffix) {
            throw ShapeError("add shapes incompatible: " + shape_str(sa) + " vs " + shape_str(sb));
        }
    }
    Tensor<T> out(sa);
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    if (scalar_b) {
        const T v = pb[0];
        for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] + v;
    } else if (sa == sb) {
        for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] + pb[i];
    } else {
        for (std::size_t i = 0; i < na; ++i) po[i] = pa[i] + pb[i % nbn];
    }
    return make_node<T>(std::move(out), {a, b}, "add", [na, nbn](Node<T>& self) {
        auto& ai = *self.inputs[0];
        auto& bi = *self.inputs[1];
        const T* g = self.grad.data();
        if (ai.requires_grad) {
            T* da = ai.grad.data();
            for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
        }
        if (bi.requires_grad) {
            T* db = bi.grad.data();
            for (std::size_t i = 0; i < na; ++i) db[i % nbn] += g[i];
        }
    });
}

// Elementwise product; either operand may be a scalar [1].
template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
    const bool a_scalar = a->value.numel() == 1;
    const bool b_scalar = b->value.numel() == 1;
    if (!a_scalar && !b_scalar && !a->value.same_shape(b->value)) {
        throw ShapeError("mul shapes incompatible: " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    }
    const Shape& so = a_scalar ? b->value.shape() : a->value.shape();
    const std::size_t n = shape_numel(so);
    Tensor<T> out(so);
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[a_scalar ? 0 : i] * pb[b_scalar ? 0 : i];
    return make_node<T>(std::move(out), {a, b}, "mul", [a_scalar, b_scalar, n](Node<T>& self) {
        auto& ai = *self.inputs[0];
        auto& bi = *self.inputs[1];
        const T* g = self.grad.data();
        const T* pa = ai.value.data();
        const T* pb = bi.value.data();
        if (ai.requires_grad) {
            T* da = ai.grad.data();
            for (std::size_t i = 0; i < n; ++i) da[a_scalar ? 0 : i] += g[i] * pb[b_scalar ? 0 : i];
        }
        if (bi.requires_grad) {
            T* db = bi.grad.data();
            for (std::size_t i = 0; i < n; ++i) db[b_scalar ? 0 : i] += g[i] * pa[a_scalar ? 0 : i];
        }
    });
}

// Multiply by a compile-time-known constant.
template <typename T>
NodePtr<T> scale(const NodePtr<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    const T* pa = a->value.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
    return make_node<T>(std::move(out), {a}, "scale", [c](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        T* d = in.grad.data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) d[i] += g[i] * c;
    });
}

// Split channels into M head slices: [N, C] -> [M, N, C/M].
template <typename T>
NodePtr<T> heads_split(const NodePtr<T>& x, std::size_t m) {
    const Shape& s = x->value.shape();
    if (s.size() != 2) throw ShapeError("heads_split expects [N,C], got " + shape_str(s));
    if (m == 0 || s[1] % m != 0) {
        throw ConfigError("channel count " + std::to_string(s[1]) + " not divisible by head count " +
                          std::to_string(m));
    }
    const std::size_t n = s[0], c = s[1], hd = c / m;
    Tensor<T> out(Shape{m, n, hd});
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t h = 0; h < m; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < hd; ++d) po[(h * n + i) * hd + d] = px[i * c + h * hd + d];
    return make_node<T>(std::move(out), {x}, "heads_split", [m, n, c, hd](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        T* d = in.grad.data();
        for (std::size_t h = 0; h < m; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < hd; ++k)
                    d[i * c + h * hd + k] += g[(h * n + i) * hd + k];
    });
}

// Concatenate head slices back across channels: [M, N, C/M] -> [N, C].
template <typename T>
NodePtr<T> heads_join(const NodePtr<T>& x) {
    const Shape& s = x->value.shape();
    if (s.size() != 3) throw ShapeError("heads_join expects [M,N,hd], got " + shape_str(s));
    const std::size_t m = s[0], n = s[1], hd = s[2], c = m * hd;
    Tensor<T> out(Shape{n, c});
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t h = 0; h < m; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < hd; ++d) po[i * c + h * hd + d] = px[(h * n + i) * hd + d];
    return make_node<T>(std::move(out), {x}, "heads_join", [m, n, c, hd](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        T* d = in.grad.data();
        for (std::size_t h = 0; h < m; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < hd; ++k)
                    d[(h * n + i) * hd + k] += g[i * c + h * hd + k];
    });
}

// Exact (erf-based) GELU.
template <typename T>
NodePtr<T> gelu(const NodePtr<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<T> out(x->value.shape());
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = static_cast<double>(px[i]);
        po[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    return make_node<T>(std::move(out), {x}, "gelu", [inv_sqrt2, inv_sqrt2pi](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        const T* px = in.value.data();
        T* d = in.grad.data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double v = static_cast<double>(px[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            d[i] += g[i] * static_cast<T>(cdf + v * pdf);
        }
    });
}

// Row-wise softmax over the trailing axis, stabilized by max subtraction.
template <typename T>
NodePtr<T> softmax_rows(const NodePtr<T>& x) {
    const Shape& s = x->value.shape();
    if (s.empty()) throw ShapeError("softmax_rows expects rank >= 1");
    const std::size_t w = s.back();
    const std::size_t rows = x->value.numel() / w;
    Tensor<T> out(s);
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = px + r * w;
        T* orow = po + r * w;
        T mx = row[0];
        for (std::size_t j = 0; j < w; ++j) {
            if (std::isnan(static_cast<double>(row[j])))
                throw NumericError("softmax_rows: NaN in input row " + std::to_string(r));
            mx = std::max(mx, row[j]);
        }
        T sum{0};
        for (std::size_t j = 0; j < w; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const T inv = T{1} / sum;
        for (std::size_t j = 0; j < w; ++j) orow[j] *= inv;
    }
    return make_node<T>(std::move(out), {x}, "softmax_rows", [w, rows](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        const T* y = self.value.data();
        T* d = in.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y + r * w;
            const T* gr = g + r * w;
            T dot{0};
            for (std::size_t j = 0; j < w; ++j) dot += yr[j] * gr[j];
            T* dr = d + r * w;
            for (std::size_t j = 0; j < w; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// Layer normalization over the trailing (channel) axis with affine gamma/beta.
template <typename T>
NodePtr<T> layer_norm(const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta,
                      T eps = static_cast<T>(1e-5)) {
    const Shape& s = x->value.shape();
    if (s.empty()) throw ShapeError("layer_norm expects rank >= 1");
    const std::size_t c = s.back();
    if (gamma->value.numel() != c || beta->value.numel() != c) {
        throw ShapeError("layer_norm affine params must have " + std::to_string(c) + " elements");
    }
    const std::size_t rows = x->value.numel() / c;
    Tensor<T> out(s);
    Tensor<T> xhat(s);
    Tensor<T> inv_std(Shape{rows});
    const T* px = x->value.data();
    const T* pg = gamma->value.data();
    const T* pb = beta->value.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = px + r * c;
        T mean{0};
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var{0};
        for (std::size_t j = 0; j < c; ++j) {
            const T dv = row[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(c);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        T* xh = xhat.data() + r * c;
        T* orow = out.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) {
            xh[j] = (row[j] - mean) * is;
            orow[j] = xh[j] * pg[j] + pb[j];
        }
    }
    return make_node<T>(
        std::move(out), {x, gamma, beta}, "layer_norm",
        [c, rows, xh = std::move(xhat), is = std::move(inv_std)](Node<T>& self) {
            auto& xi = *self.inputs[0];
            auto& gi = *self.inputs[1];
            auto& bi = *self.inputs[2];
            const T* g = self.grad.data();
            const T* pg = gi.value.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g + r * c;
                const T* xr = xh.data() + r * c;
                if (gi.requires_grad) {
                    T* dg = gi.grad.data();
                    for (std::size_t j = 0; j < c; ++j) dg[j] += gr[j] * xr[j];
                }
                if (bi.requires_grad) {
                    T* db = bi.grad.data();
                    for (std::size_t j = 0; j < c; ++j) db[j] += gr[j];
                }
                if (xi.requires_grad) {
                    T m1{0}, m2{0};
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = gr[j] * pg[j];
                        m1 += dxh;
                        m2 += dxh * xr[j];
                    }
                    m1 /= static_cast<T>(c);
                    m2 /= static_cast<T>(c);
                    T* dx = xi.grad.data() + r * c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = gr[j] * pg[j];
                        dx[j] += is[r] * (dxh - m1 - xr[j] * m2);
                    }
                }
            }
        });
}

template <typename T>
NodePtr<T> sum_all(const NodePtr<T>& x) {
    T acc{0};
    const T* px = x->value.data();
    for (std::size_t i = 0; i < x->value.numel(); ++i) acc += px[i];
    return make_node<T>(Tensor<T>::scalar(acc), {x}, "sum_all", [](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T g = self.grad[0];
        T* d = in.grad.data();
        for (std::size_t i = 0; i < in.value.numel(); ++i) d[i] += g;
    });
}

template <typename T>
NodePtr<T> mean_all(const NodePtr<T>& x) {
    const std::size_t n = x->value.numel();
    return scale(sum_all(x), T{1} / static_cast<T>(n));
}

// Mean over the token (first) axis of a [N, C] tensor -> [1, C].
template <typename T>
NodePtr<T> mean_tokens(const NodePtr<T>& x) {
    const Shape& s = x->value.shape();
    if (s.size() != 2) throw ShapeError("mean_tokens expects [N,C], got " + shape_str(s));
    const std::size_t n = s[0], c = s[1];
    Tensor<T> out(Shape{1, c});
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) po[j] += px[i * c + j];
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t j = 0; j < c; ++j) po[j] *= inv;
    return make_node<T>(std::move(out), {x}, "mean_tokens", [n, c, inv](Node<T>& self) {
        auto& in = *self.inputs[0];
        const T* g = self.grad.data();
        T* d = in.grad.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j] * inv;
    });
}

// Softmax cross-entropy of a single logit vector against an integer label.
template <typename T>
NodePtr<T> cross_entropy(const NodePtr<T>& logits, std::size_t label) {
    const std::size_t k = logits->value.numel();
    if (label >= k) {
        throw ConfigError("label " + std::to_string(label) + " out of range for " +
                          std::to_string(k) + " classes");
    }
    const T* px = logits->value.data();
    T mx = px[0];
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, px[j]);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(px[j] - mx);
    const T lse = mx + std::log(sum);
    const T loss = lse - px[label];
    return make_node<T>(Tensor<T>::scalar(loss), {logits}, "cross_entropy",
                        [label, k, mx, sum](Node<T>& self) {
                            auto& in = *self.inputs[0];
                            const T g = self.grad[0];
                            const T* px = in.value.data();
                            T* d = in.grad.data();
                            for (std::size_t j = 0; j < k; ++j) {
                                const T p = std::exp(px[j] - mx) / sum;
                                d[j] += g * (p - (j == label ? T{1} : T{0}));
                            }
                        });
}

// Gather non-overlapping p x p patches of a [H, W, C] grid into rows of a
// [(H/p)*(W/p), p*p*C] matrix; patches and their contents are row-major.
template <typename T>
NodePtr<T> extract_patches(const NodePtr<T>& x, std::size_t p) {
    const Shape& s = x->value.shape();
    if (s.size() != 3) throw ShapeError("extract_patches expects [H,W,C], got " + shape_str(s));
    const std::size_t h = s[0], w = s[1], c = s[2];
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch " + std::to_string(p));
    }
    const std::size_t gh = h / p, gw = w / p, row_len = p * p * c;
    Tensor<T> out(Shape{gh * gw, row_len});
    const T* px = x->value.data();
    T* po = out.data();
    for (std::size_t ti = 0; ti < gh; ++ti)
        for (std::size_t tj = 0; tj < gw; ++tj) {
            T* dst = po + (ti * gw + tj) * row_len;
            for (std::size_t pr = 0; pr < p; ++pr)
                for (std::size_t pc = 0; pc < p; ++pc)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        *dst++ = px[((ti * p + pr) * w + tj * p + pc) * c + ch];
        }
    return make_node<T>(std::move(out), {x}, "extract_patches",
                        [p, h, w, c, gh, gw, row_len](Node<T>& self) {
                            auto& in = *self.inputs[0];
                            const T* g = self.grad.data();
                            T* d = in.grad.data();
                            for (std::size_t ti = 0; ti < gh; ++ti)
                                for (std::size_t tj = 0; tj < gw; ++tj) {
                                    const T* src = g + (ti * gw + tj) * row_len;
                                    for (std::size_t pr = 0; pr < p; ++pr)
                                        for (std::size_t pc = 0; pc < p; ++pc)
                                            for (std::size_t ch = 0; ch < c; ++ch)
                                                d[((ti * p + pr) * w + tj * p + pc) * c + ch] +=
                                                    *src++;
                                }
                        });
}

// ---------------------------------------------------------------------------
// Reverse pass. Visits each reachable node exactly once in reverse
// topological order; leaf nodes accumulate (+=) into their Param's grad.
template <typename T>
void backward(const NodePtr<T>& loss, bool keep_node_grads = false) {
    if (loss->value.numel() != 1) {
        throw Error("backward requires a scalar loss, got shape " +
                    shape_str(loss->value.shape()));
    }
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node<T>* child = node->inputs[idx++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    if (!loss->requires_grad) return;
    for (Node<T>* n : topo) n->grad = Tensor<T>(n->value.shape());
    loss->grad[0] = T{1};
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) n->backward(*n);
        if (n->param && n->param->requires_grad) {
            T* dst = n->param->grad.data();
            const T* src = n->grad.data();
            for (std::size_t i = 0; i < n->grad.numel(); ++i) dst[i] += src[i];
        }
    }
    if (!keep_node_grads)
        for (Node<T>* n : topo) n->grad = Tensor<T>();
}

}  // namespace cak
