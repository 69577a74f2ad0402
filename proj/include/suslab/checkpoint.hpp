#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "suslab/core.hpp"
#include "suslab/io.hpp"
#include "suslab/net.hpp"

namespace suslab {

enum class Phase : std::uint8_t {
    initial = 0,
    backdoored = 1,
    released = 2,
    sparse = 3,
    finetuned = 4,
};

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::initial: return "initial";
        case Phase::backdoored: return "backdoored";
        case Phase::released: return "released";
        case Phase::sparse: return "sparse";
        case Phase::finetuned: return "finetuned";
    }
    return "unknown";
}

/// Serializable model snapshot. Weights are stored as little-endian 64-bit
/// reals, so save/load round-trips are bit-identical.
struct Checkpoint {
    Phase phase = Phase::initial;
    std::uint64_t config_hash = 0;
    Network net;
    std::vector<std::optional<PruneMask>> masks;    // per layer, optional
    std::optional<ColumnPermutation> input_perm;    // set by sparsify when layer 0 was permuted
};

inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'K', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void write_bits(std::ostream& os, const std::vector<std::uint8_t>& bits) {
    std::uint8_t byte = 0;
    int filled = 0;
    for (std::uint8_t b : bits) {
        byte |= static_cast<std::uint8_t>((b & 1) << filled);
        if (++filled == 8) {
            io::write_le<std::uint8_t>(os, byte);
            byte = 0;
            filled = 0;
        }
    }
    if (filled > 0) io::write_le<std::uint8_t>(os, byte);
}

inline std::vector<std::uint8_t> read_bits(std::istream& is, std::size_t count) {
    std::vector<std::uint8_t> bits(count);
    std::size_t i = 0;
    while (i < count) {
        std::uint8_t byte = io::read_le<std::uint8_t>(is);
        for (int k = 0; k < 8 && i < count; ++k, ++i) bits[i] = (byte >> k) & 1;
    }
    return bits;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, std::ostream& os) {
    ck.net.validate();
    if (!ck.masks.empty() && ck.masks.size() != ck.net.layers.size())
        throw std::invalid_argument("save_checkpoint: mask count mismatch");
    io::write_magic(os, kCheckpointMagic);
    io::write_le<std::uint16_t>(os, kCheckpointVersion);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(ck.phase));
    io::write_le<std::uint64_t>(os, ck.config_hash);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.net.head_begin));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.net.layer_count()));
    for (int k = 0; k < ck.net.layer_count(); ++k) {
        const Layer& l = ck.net.layers[k];
        io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.in_dim()));
        io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.out_dim()));
        io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l.act));
        for (double v : l.weights.data) io::write_f64(os, v);
        for (double v : l.bias) io::write_f64(os, v);
        bool has_mask = !ck.masks.empty() && ck.masks[k].has_value();
        io::write_le<std::uint8_t>(os, has_mask ? 1 : 0);
        if (has_mask) detail::write_bits(os, ck.masks[k]->bits().bits);
    }
    io::write_le<std::uint8_t>(os, ck.input_perm.has_value() ? 1 : 0);
    if (ck.input_perm) {
        io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.input_perm->size()));
        for (int v : ck.input_perm->map) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
    }
}

inline Checkpoint load_checkpoint(std::istream& is) {
    io::expect_magic(is, kCheckpointMagic, "Checkpoint");
    std::uint16_t version = io::read_le<std::uint16_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("Checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    std::uint8_t phase = io::read_le<std::uint8_t>(is);
    if (phase > static_cast<std::uint8_t>(Phase::finetuned))
        throw std::runtime_error("Checkpoint: bad phase tag");
    ck.phase = static_cast<Phase>(phase);
    ck.config_hash = io::read_le<std::uint64_t>(is);
    int head_begin = static_cast<int>(io::read_le<std::uint32_t>(is));
    std::uint32_t layer_count = io::read_le<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < layer_count; ++k) {
        Layer l;
        int in = static_cast<int>(io::read_le<std::uint32_t>(is));
        int out = static_cast<int>(io::read_le<std::uint32_t>(is));
        std::uint8_t act = io::read_le<std::uint8_t>(is);
        if (act > static_cast<std::uint8_t>(Activation::none))
            throw std::runtime_error("Checkpoint: bad activation");
        l.act = static_cast<Activation>(act);
        l.weights = DenseMatrix(out, in);
        for (double& v : l.weights.data) v = io::read_f64(is);
        l.bias.resize(out);
        for (double& v : l.bias) v = io::read_f64(is);
        ck.net.layers.push_back(std::move(l));
        if (io::read_le<std::uint8_t>(is)) {
            BinaryMatrix bm(out, in);
            bm.bits = detail::read_bits(is, static_cast<std::size_t>(out) * in);
            ck.masks.resize(layer_count);
            ck.masks[k] = PruneMask::from_bits(std::move(bm));
        }
    }
    if (!ck.masks.empty()) ck.masks.resize(layer_count);
    ck.net.head_begin = head_begin;
    ck.net.validate();
    if (io::read_le<std::uint8_t>(is)) {
        ColumnPermutation p;
        std::uint32_t len = io::read_le<std::uint32_t>(is);
        for (std::uint32_t i = 0; i < len; ++i)
            p.map.push_back(static_cast<int>(io::read_le<std::uint32_t>(is)));
        p.validate();
        ck.input_perm = std::move(p);
    }
    return ck;
}

inline void save_checkpoint_file(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    save_checkpoint(ck, os);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return load_checkpoint(is);
}

}  // namespace suslab
