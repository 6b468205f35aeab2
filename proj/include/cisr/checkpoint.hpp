#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "CISRCKPT"                      8 bytes
//   version                         u32
//   config text                     u32 length + bytes (canonical ModelConfig)
//   set count                       u32
//   per set:  label                 u32 length + bytes
//             entry count           u32
//             per entry: name       u32 length + bytes
//                        rank       u32
//                        dims       rank x u32
//                        values     prod(dims) x f32
//   checksum                        u64 FNV-1a over every preceding byte

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisr/config.hpp"

namespace cisr {

inline constexpr std::array<char, 8> kCheckpointMagic = {'C', 'I', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Code { io, bad_magic, unsupported_version, checksum, truncated, dimension_overflow, malformed, config_mismatch };

    CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

    std::size_t remaining() const { return n_ - pos_; }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
        pos_ += len;
        return s;
    }

private:
    void need(std::size_t k) const {
        if (remaining() < k) throw CheckpointError(CheckpointError::Code::truncated, "checkpoint ends mid-record");
    }
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(kCheckpointVersion);
    w.str(serialize_config(model.cfg));
    const auto sets = model.sets();
    w.u32(static_cast<std::uint32_t>(sets.size()));
    for (const auto* set : sets) {
        w.str(set->label());
        w.u32(static_cast<std::uint32_t>(set->size()));
        for (const auto& e : set->entries()) {
            w.str(e.name);
            const Shape s = e.tensor.shape();
            w.u32(4);
            for (int d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
            for (float v : e.tensor.data()) w.f32(v);
        }
    }
    const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());
    w.u64(sum);
    return std::move(w.bytes());
}

inline Model<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using Code = CheckpointError::Code;
    if (bytes.size() < kCheckpointMagic.size() + 4 + 8)
        throw CheckpointError(Code::truncated, "checkpoint is too short (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
        throw CheckpointError(Code::bad_magic, "not a checkpoint (bad magic)");
    const std::size_t body = bytes.size() - 8;
    detail::ByteReader tail(bytes.data() + body, 8);
    const std::uint64_t stored = static_cast<std::uint64_t>(tail.u32()) | (static_cast<std::uint64_t>(tail.u32()) << 32);
    detail::ByteReader r(bytes.data() + kCheckpointMagic.size(), body - kCheckpointMagic.size());
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(Code::unsupported_version, "unsupported checkpoint version " + std::to_string(version));
    if (fnv1a64(bytes.data(), body) != stored)
        throw CheckpointError(Code::checksum, "checkpoint checksum mismatch (corrupt or truncated file)");

    ModelConfig cfg;
    try {
        cfg = parse_config(r.str());
    } catch (const ConfigError& e) {
        throw CheckpointError(Code::malformed, std::string("checkpoint config block: ") + e.what());
    }
    Model<float> model = Model<float>::init(cfg);
    auto sets = model.sets();
    if (r.u32() != sets.size()) throw CheckpointError(Code::malformed, "checkpoint parameter-set count does not match its config");
    for (auto* set : sets) {
        if (r.str() != set->label()) throw CheckpointError(Code::malformed, "checkpoint set label mismatch");
        if (r.u32() != set->size())
            throw CheckpointError(Code::malformed, "checkpoint entry count mismatch in set '" + set->label() + "'");
        for (auto& e : set->entries()) {
            const std::string name = r.str();
            if (name != e.name)
                throw CheckpointError(Code::malformed, "checkpoint entry '" + name + "' where '" + e.name + "' was expected");
            const std::uint32_t rank = r.u32();
            if (rank != 4) throw CheckpointError(Code::malformed, "tensor '" + name + "' has rank " + std::to_string(rank));
            std::uint64_t count = 1;
            int dims[4];
            for (int i = 0; i < 4; ++i) {
                const std::uint32_t d = r.u32();
                // The byte size of the tensor has to fit in a size_t.
                if (d > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
                    (d != 0 && count > std::numeric_limits<std::size_t>::max() / 4 / d))
                    throw CheckpointError(Code::dimension_overflow, "tensor '" + name + "' dimensions overflow");
                count *= d;
                dims[i] = static_cast<int>(d);
            }
            if (count > r.remaining() / 4)
                throw CheckpointError(Code::truncated, "tensor '" + name + "' claims more values than the file holds");
            const Shape s{dims[0], dims[1], dims[2], dims[3]};
            if (s != e.tensor.shape())
                throw CheckpointError(Code::malformed, "tensor '" + name + "' has shape " + s.str() + ", config implies " +
                                                           e.tensor.shape().str());
            for (float& v : e.tensor.data()) v = r.f32();
        }
    }
    if (r.remaining() != 0) throw CheckpointError(Code::malformed, "trailing bytes after tensor table");
    return model;
}

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Code::io, "cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Code::io, "cannot write checkpoint " + path.string());
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Code::io, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Loads and checks that the stored architecture matches `requested`.
inline Model<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& requested) {
    Model<float> model = load_checkpoint(path);
    if (auto diff = architecture_mismatch(model.cfg, requested))
        throw CheckpointError(CheckpointError::Code::config_mismatch,
                              "checkpoint " + path.string() + " does not match the requested config: " + *diff);
    return model;
}

}  // namespace cisr
