#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cak/network.hpp"

// Plain key = value config files mirroring NetworkConfig and TrainConfig.
// Lines starting with '#' are comments.
namespace cak {

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_kv(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: '" +
                              line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline KvMap read_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_kv(ss.str());
}

namespace detail {

inline double kv_num(const KvMap& kv, const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-numeric value '" + it->second + "'");
    }
}

inline std::size_t kv_uint(const KvMap& kv, const std::string& key, std::size_t fallback) {
    const double v = kv_num(kv, key, static_cast<double>(fallback));
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

inline AffinityKind parse_kind(const std::string& s) {
    if (s == "sa") return AffinityKind::DynamicSA;
    if (s == "conv") return AffinityKind::StaticConv;
    if (s == "mlp") return AffinityKind::StaticMlp;
    if (s == "mixture") return AffinityKind::Mixture;
    throw ConfigError("unknown affinity kind '" + s + "' (use sa|conv|mlp|mixture)");
}

inline StaticKind parse_static(const std::string& s) {
    if (s == "none") return StaticKind::None;
    if (s == "conv") return StaticKind::Conv;
    if (s == "mlp-dense") return StaticKind::MlpDense;
    if (s == "mlp-lowrank") return StaticKind::MlpLowRank;
    throw ConfigError("unknown static kind '" + s + "' (use none|conv|mlp-dense|mlp-lowrank)");
}

inline const char* static_kind_name(StaticKind k) {
    switch (k) {
        case StaticKind::None: return "none";
        case StaticKind::Conv: return "conv";
        case StaticKind::MlpDense: return "mlp-dense";
        case StaticKind::MlpLowRank: return "mlp-lowrank";
    }
    return "?";
}

}  // namespace detail

inline std::string write_network_config(const NetworkConfig& cfg) {
    std::ostringstream os;
    os << "# cak network configuration\n";
    if (!cfg.preset.empty()) os << "preset = " << cfg.preset << "\n";
    os << "input_h = " << cfg.input_h << "\n";
    os << "input_w = " << cfg.input_w << "\n";
    os << "input_channels = " << cfg.input_channels << "\n";
    os << "num_classes = " << cfg.num_classes << "\n";
    os << "ffn_ratio = " << cfg.ffn_ratio << "\n";
    for (std::size_t s = 0; s < 4; ++s) {
        const StageConfig& st = cfg.stages[s];
        const std::string p = "stage" + std::to_string(s + 1) + ".";
        os << p << "depth = " << st.depth << "\n";
        os << p << "dim = " << st.dim << "\n";
        os << p << "patch = " << st.patch << "\n";
        os << p << "head_dim = " << st.head_dim << "\n";
        os << p << "kind = " << affinity_kind_name(st.kind) << "\n";
        os << p << "static = " << detail::static_kind_name(st.static_kind) << "\n";
        os << p << "kernel = " << st.kernel_size << "\n";
        os << p << "reduction = " << st.reduction << "\n";
    }
    return os.str();
}

inline NetworkConfig parse_network_config(const KvMap& kv) {
    NetworkConfig cfg;
    auto it = kv.find("preset");
    if (it != kv.end()) cfg = preset(it->second);
    cfg.input_h = detail::kv_uint(kv, "input_h", cfg.input_h);
    cfg.input_w = detail::kv_uint(kv, "input_w", cfg.input_w);
    cfg.input_channels = detail::kv_uint(kv, "input_channels", cfg.input_channels);
    cfg.num_classes = detail::kv_uint(kv, "num_classes", cfg.num_classes);
    cfg.ffn_ratio = detail::kv_uint(kv, "ffn_ratio", cfg.ffn_ratio);
    for (std::size_t s = 0; s < 4; ++s) {
        StageConfig& st = cfg.stages[s];
        const std::string p = "stage" + std::to_string(s + 1) + ".";
        st.depth = detail::kv_uint(kv, p + "depth", st.depth);
        st.dim = detail::kv_uint(kv, p + "dim", st.dim);
        st.patch = detail::kv_uint(kv, p + "patch", st.patch);
        st.head_dim = detail::kv_uint(kv, p + "head_dim", st.head_dim);
        if (kv.count(p + "kind")) st.kind = detail::parse_kind(kv.at(p + "kind"));
        if (kv.count(p + "static")) st.static_kind = detail::parse_static(kv.at(p + "static"));
        st.kernel_size = detail::kv_uint(kv, p + "kernel", st.kernel_size);
        st.reduction = detail::kv_uint(kv, p + "reduction", st.reduction);
    }
    return cfg;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path);
    f << text;
    if (!f) throw IoError("failed writing file: " + path);
}

}  // namespace cak
