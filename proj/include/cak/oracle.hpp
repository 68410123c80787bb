#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cak/errors.hpp"

// Brute-force reference computations used by the verification suites. These
// deliberately share no code with the tensor/autodiff path: plain loops over
// raw double buffers, f64 only.
namespace cak::oracle {

// Depthwise convolution on a [H, W, C] grid (row-major, channel fastest)
// with kernel [C, k, k], zero padding, stride 1:
//   out[y, x, c] = sum_{dy,dx in [-r,r]} kernel[c, dy+r, dx+r] * in[y-dy, x-dx, c]
inline std::vector<double> direct_depthwise_conv(const std::vector<double>& grid, std::size_t h,
                                                 std::size_t w, std::size_t c,
                                                 const std::vector<double>& kernel,
                                                 std::size_t k) {
    if (k % 2 == 0) throw ConfigError("depthwise conv kernel size must be odd, got " + std::to_string(k));
    if (grid.size() != h * w * c || kernel.size() != c * k * k)
        throw ShapeError("direct_depthwise_conv: buffer sizes do not match dims");
    const long r = static_cast<long>(k - 1) / 2;
    std::vector<double> out(h * w * c, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long sy = static_cast<long>(y) - dy;
                        const long sx = static_cast<long>(x) - dx;
                        if (sy < 0 || sy >= static_cast<long>(h) || sx < 0 ||
                            sx >= static_cast<long>(w))
                            continue;
                        const double kv =
                            kernel[(ch * k + static_cast<std::size_t>(dy + r)) * k +
                                   static_cast<std::size_t>(dx + r)];
                        acc += kv * grid[(static_cast<std::size_t>(sy) * w +
                                          static_cast<std::size_t>(sx)) * c + ch];
                    }
                out[(y * w + x) * c + ch] = acc;
            }
    return out;
}

struct AttentionRef {
    std::vector<double> affinity;  // [M, N, N]
    std::vector<double> out;       // [N, C]
};

// Multi-head self-attention by explicit loops: q = x Wq, k = x Wk, v = x Wv
// (no biases), per-head scores scaled by 1/sqrt(C/M), softmax per row,
// weighted value sums concatenated across heads.
inline AttentionRef naive_attention(const std::vector<double>& x, std::size_t n, std::size_t c,
                                    const std::vector<double>& wq, const std::vector<double>& wk,
                                    const std::vector<double>& wv, std::size_t m) {
    if (c % m != 0) throw ConfigError("naive_attention: channels not divisible by heads");
    if (x.size() != n * c || wq.size() != c * c || wk.size() != c * c || wv.size() != c * c)
        throw ShapeError("naive_attention: buffer sizes do not match dims");
    const std::size_t hd = c / m;
    auto project = [&](const std::vector<double>& wmat) {
        std::vector<double> y(n * c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < c; ++t) acc += x[i * c + t] * wmat[t * c + j];
                y[i * c + j] = acc;
            }
        return y;
    };
    const std::vector<double> q = project(wq);
    const std::vector<double> k = project(wk);
    const std::vector<double> v = project(wv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    AttentionRef ref;
    ref.affinity.assign(m * n * n, 0.0);
    ref.out.assign(n * c, 0.0);
    for (std::size_t head = 0; head < m; ++head) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(n, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < hd; ++d)
                    acc += q[i * c + head * hd + d] * k[j * c + head * hd + d];
                row[j] = acc * scale;
            }
            double mx = row[0];
            for (double rv : row) mx = std::max(mx, rv);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                row[j] /= sum;
                ref.affinity[(head * n + i) * n + j] = row[j];
            }
            for (std::size_t d = 0; d < hd; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += row[j] * v[j * c + head * hd + d];
                ref.out[i * c + head * hd + d] = acc;
            }
        }
    }
    return ref;
}

// Plain triple-loop matrix product, [p,q] x [q,r].
inline std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                                      std::size_t p, std::size_t q, std::size_t r) {
    std::vector<double> out(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < q; ++t) acc += a[i * q + t] * b[t * r + j];
            out[i * r + j] = acc;
        }
    return out;
}

// Central finite differences of a scalar function of a flat parameter
// vector: g_i = (f(x + h e_i) - f(x - h e_i)) / (2h).
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace cak::oracle
