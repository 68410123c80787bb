#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "cak/network.hpp"

// Static-affinity visualization: pick a block, materialize its static
// affinity matrix, take the row of one source position and reshape it to the
// stage's token grid. Emitted as a CSV matrix (17 significant digits) and a
// min-max normalized 8-bit binary PGM.
namespace cak {

struct AffinityRow {
    GridDims grid;
    std::vector<double> values;  // grid.h x grid.w, row-major
};

template <typename T>
AffinityRow static_affinity_row(Network<T>& net, std::size_t stage, std::size_t block,
                                std::size_t head, long position) {
    if (stage < 1 || stage > 4) throw ConfigError("stage must be in 1..4");
    auto& st = net.stages()[stage - 1];
    if (block >= st.ctx.size()) {
        throw ConfigError("stage " + std::to_string(stage) + " has " +
                          std::to_string(st.ctx.size()) + " blocks; block index " +
                          std::to_string(block) + " out of range");
    }
    ContextBlockParams<T>& params = st.ctx[block];
    if (!params.static_conv && !params.static_mlp) {
        throw ConfigError(
            "block has no static affinity; visualizable kinds are conv, mlp and "
            "mixture/pam blocks (dynamic-only attention has nothing static to draw)");
    }
    const std::size_t n = st.grid.tokens();
    if (head >= st.agg.heads)
        throw ConfigError("head " + std::to_string(head) + " out of range; stage has " +
                          std::to_string(st.agg.heads) + " heads");
    std::size_t pos;
    if (position < 0) {
        pos = (st.grid.h / 2) * st.grid.w + st.grid.w / 2;  // center of the grid
    } else {
        pos = static_cast<std::size_t>(position);
        if (pos >= n)
            throw ConfigError("position " + std::to_string(pos) + " out of range for " +
                              std::to_string(n) + " tokens");
    }

    AffinityMatrix<T> a = params.static_conv
                              ? conv_affinity(*params.static_conv)
                              : mlp_affinity(*params.static_mlp);
    AffinityRow row;
    row.grid = st.grid;
    row.values.resize(n);
    for (std::size_t j = 0; j < n; ++j)
        row.values[j] = static_cast<double>(a.weights->value.at(head, pos, j));
    return row;
}

inline std::string affinity_row_csv(const AffinityRow& row) {
    std::ostringstream os;
    char buf[40];
    for (std::size_t r = 0; r < row.grid.h; ++r) {
        for (std::size_t c = 0; c < row.grid.w; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", row.values[r * row.grid.w + c]);
            os << (c ? "," : "") << buf;
        }
        os << '\n';
    }
    return os.str();
}

inline std::vector<double> parse_csv_matrix(const std::string& text, std::size_t& rows,
                                            std::size_t& cols) {
    std::vector<double> out;
    rows = cols = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ls, cell, ',')) {
            out.push_back(std::stod(cell));
            ++c;
        }
        if (cols == 0) cols = c;
        if (c != cols) throw IoError("ragged CSV matrix");
        ++rows;
    }
    return out;
}

// 8-bit binary PGM (P5), min-max normalized; a constant image maps to 0.
inline std::string pgm_bytes(const AffinityRow& row) {
    double lo = row.values[0], hi = row.values[0];
    for (double v : row.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::string out = "P5\n" + std::to_string(row.grid.w) + " " + std::to_string(row.grid.h) +
                      "\n255\n";
    const double span = hi - lo;
    for (double v : row.values) {
        const double norm = span > 0.0 ? (v - lo) / span : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(norm * 255.0))));
    }
    return out;
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing file: " + path);
}

}  // namespace cak
