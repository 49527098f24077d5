#pragma once

// Checkpoint container format LCK1 (little-endian throughout):
//   magic   "LCK1"          4 bytes
//   version u32 = 1
//   count   u32             section count
//   per section:
//     name_len u32, name bytes (UTF-8)
//     elem_width u8          4 (float32) or 8 (float64)
//     rank u32, extents u32 each
//     payload extent-product * elem_width raw little-endian bytes
//   crc u32                 CRC-32 (IEEE) of everything after the magic
//
// Sections keep their raw bytes in memory, so save(load(file)) is
// byte-identical. The section "config/seed" stores a raw little-endian u64
// in one 8-byte element; all other config scalars are exact float64.

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "lightcrl/data.hpp"
#include "lightcrl/errors.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

inline std::uint32_t crc32_ieee(const unsigned char* p, std::size_t n, std::uint32_t crc = 0) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    while (n--) crc = table[(crc ^ *p++) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

struct CheckpointSection {
    std::string name;
    std::uint8_t elem_width = 8;
    Shape shape;
    std::vector<unsigned char> raw;

    std::size_t numel() const { return shape_numel(shape); }

    std::vector<double> as_f64() const {
        std::vector<double> out(numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (elem_width == 4) {
                float v;
                std::memcpy(&v, raw.data() + i * 4, 4);
                out[i] = static_cast<double>(v);
            } else {
                std::memcpy(&out[i], raw.data() + i * 8, 8);
            }
        }
        return out;
    }

    double scalar() const {
        if (numel() != 1) throw ContractError("checkpoint section '" + name + "' is not scalar");
        return as_f64()[0];
    }

    std::uint64_t scalar_u64_bits() const {
        if (elem_width != 8 || numel() != 1)
            throw ContractError("checkpoint section '" + name + "' is not a raw u64 slot");
        std::uint64_t v;
        std::memcpy(&v, raw.data(), 8);
        return v;
    }
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::vector<CheckpointSection> sections;

    const CheckpointSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    const CheckpointSection& require(const std::string& name) const {
        const auto* s = find(name);
        if (!s) throw ContractError("checkpoint is missing section '" + name + "'");
        return *s;
    }

    template <class S>
    void add_tensor(const std::string& name, const Tensor<S>& t) {
        add_values<S>(name, t.shape(), t.value());
    }

    template <class S>
    void add_values(const std::string& name, Shape shape, std::span<const S> vals) {
        CheckpointSection sec;
        sec.name = name;
        sec.elem_width = sizeof(S);
        sec.shape = std::move(shape);
        sec.raw.resize(vals.size() * sizeof(S));
        std::memcpy(sec.raw.data(), vals.data(), sec.raw.size());
        sections.push_back(std::move(sec));
    }

    void add_scalar_f64(const std::string& name, double v) {
        add_values<double>(name, {1}, std::span<const double>(&v, 1));
    }

    void add_seed(const std::string& name, std::uint64_t seed) {
        CheckpointSection sec;
        sec.name = name;
        sec.elem_width = 8;
        sec.shape = {1};
        sec.raw.resize(8);
        std::memcpy(sec.raw.data(), &seed, 8);
        sections.push_back(std::move(sec));
    }

    template <class S>
    void read_into(const std::string& name, Tensor<S>& dst) const {
        const CheckpointSection& sec = require(name);
        if (sec.shape != dst.shape())
            throw ContractError("checkpoint section '" + name + "' has shape " + shape_str(sec.shape) +
                                ", model expects " + shape_str(dst.shape()));
        if (sec.elem_width != sizeof(S))
            throw ContractError("checkpoint section '" + name + "' has element width " +
                                std::to_string(sec.elem_width) + ", build uses " + std::to_string(sizeof(S)));
        std::memcpy(dst.value_mut().data(), sec.raw.data(), sec.raw.size());
    }
};

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string body;
    detail::put_u32(body, ckpt.version);
    detail::put_u32(body, static_cast<std::uint32_t>(ckpt.sections.size()));
    for (const auto& sec : ckpt.sections) {
        detail::put_u32(body, static_cast<std::uint32_t>(sec.name.size()));
        body += sec.name;
        body.push_back(static_cast<char>(sec.elem_width));
        detail::put_u32(body, static_cast<std::uint32_t>(sec.shape.size()));
        for (std::size_t e : sec.shape) detail::put_u32(body, static_cast<std::uint32_t>(e));
        body.append(reinterpret_cast<const char*>(sec.raw.data()), sec.raw.size());
    }
    const std::uint32_t crc = crc32_ieee(reinterpret_cast<const unsigned char*>(body.data()), body.size());
    std::string out = "LCK1" + body;
    detail::put_u32(out, crc);
    return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

inline Checkpoint decode_checkpoint(const unsigned char* bytes, std::size_t len) {
    if (len < 4 || std::memcmp(bytes, "LCK1", 4) != 0) throw FormatError("bad magic, expected LCK1");
    if (len < 8) throw CorruptionError("truncated checkpoint");
    const std::size_t body_len = len - 8;
    detail::ByteReader tail(bytes + 4 + body_len, 4);
    const std::uint32_t stored_crc = tail.u32();
    const std::uint32_t actual_crc = crc32_ieee(bytes + 4, body_len);
    if (stored_crc != actual_crc) throw CorruptionError("CRC mismatch");

    detail::ByteReader r(bytes + 4, body_len);
    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
    const std::uint32_t count = r.u32();
    ckpt.sections.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointSection sec;
        const std::uint32_t name_len = r.u32();
        sec.name.resize(name_len);
        for (auto& c : sec.name) c = static_cast<char>(r.u8());
        sec.elem_width = r.u8();
        if (sec.elem_width != 4 && sec.elem_width != 8)
            throw FormatError("section '" + sec.name + "' has element width " + std::to_string(sec.elem_width));
        const std::uint32_t rank = r.u32();
        sec.shape.resize(rank);
        std::size_t numel = 1;
        for (auto& e : sec.shape) {
            e = r.u32();
            numel *= e;
        }
        const std::size_t payload = numel * sec.elem_width;
        if (payload > r.remaining()) throw CorruptionError("section '" + sec.name + "' payload exceeds file size");
        sec.raw.resize(payload);
        r.bytes(sec.raw.data(), payload);
        ckpt.sections.push_back(std::move(sec));
    }
    if (r.remaining() != 0) throw CorruptionError("trailing bytes in checkpoint body");
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    return decode_checkpoint(bytes.data(), bytes.size());
}

} // namespace lightcrl
