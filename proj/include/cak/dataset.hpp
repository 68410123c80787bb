#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cak/rng.hpp"
#include "cak/tensor.hpp"

// Deterministic synthetic classification task combining a local and a global
// cue. Channel 0 carries one of c_local 3x3 motifs stamped at a random
// position (detecting it needs local pattern matching); channels 1 and 2
// carry two marker blobs placed in far-apart quadrants whose ordered
// arrangement is the global cue (relating them needs long-range context).
// label = c_global * motif_id + arrangement_id. Every sample is a pure
// function of (seed, index).
namespace cak {

struct SyntheticTaskConfig {
    std::size_t grid = 64;  // square image, 3 channels
    std::size_t c_local = 4;
    std::size_t c_global = 4;
    std::uint64_t seed = 0;

    std::size_t classes() const { return c_local * c_global; }
};

struct SyntheticSample {
    Tensor<float> image;  // [H, W, 3] in [0, 1]
    std::size_t label = 0;
};

namespace detail {

// 3x3 binary motifs, mutually distinct under the stamping intensity.
inline const std::array<std::array<int, 9>, 8>& motif_patterns() {
    static const std::array<std::array<int, 9>, 8> patterns = {{
        {0, 1, 0, 1, 1, 1, 0, 1, 0},  // plus
        {1, 0, 1, 0, 1, 0, 1, 0, 1},  // X
        {1, 1, 1, 0, 0, 0, 1, 1, 1},  // horizontal bars
        {1, 0, 1, 1, 0, 1, 1, 0, 1},  // vertical bars
        {1, 1, 1, 1, 0, 0, 1, 0, 0},  // corner
        {0, 0, 1, 0, 1, 1, 1, 1, 1},  // staircase
        {1, 1, 0, 1, 1, 0, 0, 0, 1},  // block + dot
        {0, 1, 1, 1, 0, 0, 0, 1, 1},  // zigzag
    }};
    return patterns;
}

// Ordered (first blob quadrant, second blob quadrant) arrangements.
// Quadrants: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
inline const std::array<std::pair<int, int>, 8>& blob_arrangements() {
    static const std::array<std::pair<int, int>, 8> arr = {{
        {0, 3}, {3, 0}, {1, 2}, {2, 1}, {0, 1}, {2, 3}, {0, 2}, {1, 3},
    }};
    return arr;
}

}  // namespace detail

// Marker blobs scale with the image so the global cue keeps a usable
// signal-to-noise ratio at any grid size.
inline std::size_t synthetic_blob_size(std::size_t grid) {
    return std::clamp<std::size_t>(grid / 8, 3, 9);
}

inline void validate_synthetic_config(const SyntheticTaskConfig& cfg) {
    const std::size_t blob = synthetic_blob_size(cfg.grid);
    if (cfg.grid < 8 || cfg.grid / 2 < blob + 2) {
        throw ConfigError("synthetic grid " + std::to_string(cfg.grid) +
                          " too small for 3x3 motifs and quadrant blobs (need >= 14)");
    }
    if (cfg.c_local == 0 || cfg.c_local > detail::motif_patterns().size())
        throw ConfigError("c_local must be in [1, 8], got " + std::to_string(cfg.c_local));
    if (cfg.c_global == 0 || cfg.c_global > detail::blob_arrangements().size())
        throw ConfigError("c_global must be in [1, 8], got " + std::to_string(cfg.c_global));
}

inline SyntheticSample synthetic_sample(const SyntheticTaskConfig& cfg, std::size_t index) {
    validate_synthetic_config(cfg);
    const std::size_t g = cfg.grid;
    SplitRng rng = SplitRng(cfg.seed).fork("sample", index);

    const std::size_t motif_id = rng.uniform_int(cfg.c_local);
    const std::size_t arrangement_id = rng.uniform_int(cfg.c_global);

    SyntheticSample s;
    s.label = cfg.c_global * motif_id + arrangement_id;
    s.image = Tensor<float>(Shape{g, g, 3});
    for (std::size_t i = 0; i < s.image.numel(); ++i)
        s.image[i] = static_cast<float>(rng.uniform(0.0, 0.01));

    // local motif, channel 0
    const auto& pattern = detail::motif_patterns()[motif_id];
    const std::size_t mr = rng.uniform_int(g - 2);
    const std::size_t mc = rng.uniform_int(g - 2);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            if (pattern[r * 3 + c]) s.image.at(mr + r, mc + c, 0) = 0.9f;

    // global arrangement: blob A in channel 1, blob B in channel 2
    const std::size_t blob = synthetic_blob_size(g);
    const std::size_t half = g / 2;
    auto place_blob = [&](int quadrant, std::size_t channel) {
        const std::size_t r0 = (quadrant / 2) * half;
        const std::size_t c0 = (quadrant % 2) * half;
        const std::size_t span = half - blob - 1;
        const std::size_t br = r0 + 1 + rng.uniform_int(span);
        const std::size_t bc = c0 + 1 + rng.uniform_int(span);
        for (std::size_t r = 0; r < blob; ++r)
            for (std::size_t c = 0; c < blob; ++c) s.image.at(br + r, bc + c, channel) = 0.9f;
    };
    const auto [qa, qb] = detail::blob_arrangements()[arrangement_id];
    place_blob(qa, 1);
    place_blob(qb, 2);
    return s;
}

inline std::vector<SyntheticSample> gen_synthetic(const SyntheticTaskConfig& cfg, std::size_t n) {
    std::vector<SyntheticSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_sample(cfg, i));
    return out;
}

}  // namespace cak
