#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cak {

// Deterministic splittable generator. Every random stream in the library is
// derived from one root seed by name (and optionally an index), so results
// do not depend on call order between unrelated components and are
// reproducible across platforms: no std::random distributions are used.
class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed) : state_(splitmix(seed ^ kRootTag)) {}

    // Child stream addressed by (name, index). Forking does not advance the
    // parent state.
    SplitRng fork(std::string_view name, std::uint64_t index = 0) const {
        std::uint64_t h = fnv1a(name);
        std::uint64_t s = state_;
        s = splitmix(s ^ h);
        s = splitmix(s ^ (index * 0x9E3779B97F4A7C15ULL + 0x243F6A8885A308D3ULL));
        return SplitRng(FromState{}, s);
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection-free Lemire-style reduction is overkill here; modulo bias
        // is negligible for the small n used (n << 2^32).
        return next_u64() % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to [-2, 2] sigma, as used for weight init.
    double trunc_normal(double stddev) {
        for (int i = 0; i < 64; ++i) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return stddev * z;
        }
        return 0.0;
    }

private:
    struct FromState {};
    SplitRng(FromState, std::uint64_t s) : state_(s) {}

    static constexpr std::uint64_t kRootTag = 0x43414B524E47ULL;  // "CAKRNG"

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return h;
    }

    std::uint64_t state_;
};

}  // namespace cak
