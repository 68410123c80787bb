#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cak/network.hpp"

// Checkpoint container, bit-exact round trip:
//   magic "CTNR" | version u32 LE | tensor count u32 LE |
//   per tensor: name len u16 LE, UTF-8 name, ndim u8, dims u64 LE,
//               dtype u8 (0=f32, 1=f64), raw values LE.
namespace cak {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(reinterpret_cast<const char*>(p), n);
}

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated checkpoint");
    }
    template <typename U>
    U get_le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(U);
        return v;
    }
    std::string get_str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

template <typename T>
void put_value_le(std::string& out, T v) {
    if constexpr (sizeof(T) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_le(out, bits);
    } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le(out, bits);
    }
}

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    Shape shape;
    Dtype dtype = Dtype::f32;
    std::vector<double> values;  // f32 payloads widened losslessly
};

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
    std::string out;
    out += "CTNR";
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.registry().size()));
    for (const auto& e : net.registry()) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        const Shape& s = e.param->value.shape();
        out.push_back(static_cast<char>(s.size()));
        for (std::size_t d : s) detail::put_le<std::uint64_t>(out, d);
        out.push_back(static_cast<char>(dtype_of<T>()));
        for (std::size_t i = 0; i < e.param->numel(); ++i)
            detail::put_value_le(out, e.param->value[i]);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r{buf};
    if (r.get_str(4) != "CTNR") throw IoError("bad magic in checkpoint: " + path);
    const auto version = r.get_le<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get_le<std::uint32_t>();
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        CheckpointEntry e;
        const auto name_len = r.get_le<std::uint16_t>();
        e.name = r.get_str(name_len);
        const auto ndim = r.get_le<std::uint8_t>();
        for (std::uint8_t d = 0; d < ndim; ++d)
            e.shape.push_back(static_cast<std::size_t>(r.get_le<std::uint64_t>()));
        const auto code = r.get_le<std::uint8_t>();
        if (code > 1) throw IoError("unknown dtype code " + std::to_string(code));
        e.dtype = static_cast<Dtype>(code);
        const std::size_t n = shape_numel(e.shape);
        e.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (e.dtype == Dtype::f32) {
                const auto bits = r.get_le<std::uint32_t>();
                float v;
                std::memcpy(&v, &bits, 4);
                e.values[i] = static_cast<double>(v);
            } else {
                const auto bits = r.get_le<std::uint64_t>();
                double v;
                std::memcpy(&v, &bits, 8);
                e.values[i] = v;
            }
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

// Restores every registry parameter by name; names, shapes and dtype must
// match the network exactly.
template <typename T>
void load_checkpoint_into(Network<T>& net, const std::string& path) {
    auto entries = read_checkpoint(path);
    std::unordered_map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    std::unordered_set<std::string> known;
    for (auto& re : net.registry()) {
        known.insert(re.name);
        auto it = by_name.find(re.name);
        if (it == by_name.end()) throw IoError("checkpoint missing tensor '" + re.name + "'");
        const CheckpointEntry& e = *it->second;
        if (e.dtype != dtype_of<T>())
            throw IoError("dtype mismatch for tensor '" + re.name + "': checkpoint has " +
                          dtype_name(e.dtype));
        if (e.shape != re.param->value.shape())
            throw IoError("shape mismatch for tensor '" + re.name + "': checkpoint has " +
                          shape_str(e.shape) + ", network has " +
                          shape_str(re.param->value.shape()));
        for (std::size_t i = 0; i < e.values.size(); ++i)
            re.param->value[i] = static_cast<T>(e.values[i]);
    }
    for (const auto& e : entries) {
        if (!known.count(e.name))
            throw IoError("unknown tensor name '" + e.name + "' in checkpoint");
    }
}

template <typename T>
Network<T> load_checkpoint(const NetworkConfig& cfg, const std::string& path) {
    Network<T> net = Network<T>::build(cfg, 0);
    load_checkpoint_into(net, path);
    return net;
}

}  // namespace cak
