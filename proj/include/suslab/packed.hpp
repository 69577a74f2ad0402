#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "suslab/core.hpp"
#include "suslab/io.hpp"
#include "suslab/sparsity.hpp"

namespace suslab {

/// Packed 2:4 layout: per 4-element group, the 2 retained values plus their
/// in-group positions as 2-bit codes. Round-trips bit-exactly with W (.) M.
struct Packed24 {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;         // rows * cols/2, row-major group order
    std::vector<std::uint8_t> indices;  // one code in 0..3 per value; strictly
                                        // increasing within each group

    std::size_t group_count() const { return static_cast<std::size_t>(rows) * (cols / 4); }
};

inline Packed24 pack(const DenseMatrix& w, const PruneMask& m) {
    if (w.rows != m.rows() || w.cols != m.cols())
        throw std::invalid_argument("pack: shape mismatch");
    Packed24 pk;
    pk.rows = w.rows;
    pk.cols = w.cols;
    pk.values.reserve(static_cast<std::size_t>(w.rows) * (w.cols / 2));
    pk.indices.reserve(pk.values.capacity());
    for (int r = 0; r < w.rows; ++r) {
        for (int g = 0; g < w.cols / 4; ++g) {
            for (int k = 0; k < 4; ++k) {  // ascending k gives increasing codes
                if (m.at(r, 4 * g + k)) {
                    pk.values.push_back(w.at(r, 4 * g + k));
                    pk.indices.push_back(static_cast<std::uint8_t>(k));
                }
            }
        }
    }
    return pk;
}

inline DenseMatrix unpack(const Packed24& pk) {
    if (pk.cols % 4 != 0 || pk.values.size() != static_cast<std::size_t>(pk.rows) * (pk.cols / 2) ||
        pk.indices.size() != pk.values.size())
        throw std::invalid_argument("unpack: malformed packed matrix");
    DenseMatrix w(pk.rows, pk.cols);
    std::size_t v = 0;
    for (int r = 0; r < pk.rows; ++r) {
        for (int g = 0; g < pk.cols / 4; ++g) {
            std::uint8_t c0 = pk.indices[v], c1 = pk.indices[v + 1];
            if (c0 >= c1 || c1 > 3) throw std::invalid_argument("unpack: invalid index codes");
            w.at(r, 4 * g + c0) = pk.values[v];
            w.at(r, 4 * g + c1) = pk.values[v + 1];
            v += 2;
        }
    }
    return w;
}

/// Reference semantics of the sparse product: gather 2 inputs per group via
/// the index codes. Matches the dense masked product to ~1e-6 relative.
inline std::vector<double> sparse_matvec(const Packed24& pk, std::span<const double> x) {
    if (static_cast<int>(x.size()) != pk.cols)
        throw std::invalid_argument("sparse_matvec: input length does not match cols");
    std::vector<double> y(pk.rows, 0.0);
    std::size_t v = 0;
    for (int r = 0; r < pk.rows; ++r) {
        double acc = 0.0;
        for (int g = 0; g < pk.cols / 4; ++g) {
            const double* xg = x.data() + 4 * g;
            acc += pk.values[v] * xg[pk.indices[v]];
            acc += pk.values[v + 1] * xg[pk.indices[v + 1]];
            v += 2;
        }
        y[r] = acc;
    }
    return y;
}

// On-disk layout: magic "P24\0", version u16, n u32, m u32, values as
// little-endian f64 in row-major group order, then 2-bit codes packed four
// per byte (low bits first), row-major.
inline constexpr char kPackedMagic[4] = {'P', '2', '4', '\0'};
inline constexpr std::uint16_t kPackedVersion = 1;

inline void save_packed(const Packed24& pk, std::ostream& os) {
    io::write_magic(os, kPackedMagic);
    io::write_le<std::uint16_t>(os, kPackedVersion);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(pk.rows));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(pk.cols));
    for (double v : pk.values) io::write_f64(os, v);
    std::uint8_t byte = 0;
    int filled = 0;
    for (std::uint8_t code : pk.indices) {
        byte |= static_cast<std::uint8_t>(code << (2 * filled));
        if (++filled == 4) {
            io::write_le<std::uint8_t>(os, byte);
            byte = 0;
            filled = 0;
        }
    }
    if (filled > 0) io::write_le<std::uint8_t>(os, byte);
}

inline Packed24 load_packed(std::istream& is) {
    io::expect_magic(is, kPackedMagic, "Packed24");
    std::uint16_t version = io::read_le<std::uint16_t>(is);
    if (version != kPackedVersion)
        throw std::runtime_error("Packed24: unsupported version " + std::to_string(version));
    Packed24 pk;
    pk.rows = static_cast<int>(io::read_le<std::uint32_t>(is));
    pk.cols = static_cast<int>(io::read_le<std::uint32_t>(is));
    if (pk.rows <= 0 || pk.cols <= 0 || pk.cols % 4 != 0)
        throw std::runtime_error("Packed24: invalid dimensions");
    std::size_t count = static_cast<std::size_t>(pk.rows) * (pk.cols / 2);
    pk.values.resize(count);
    for (auto& v : pk.values) v = io::read_f64(is);
    pk.indices.resize(count);
    std::size_t i = 0;
    while (i < count) {
        std::uint8_t byte = io::read_le<std::uint8_t>(is);
        for (int k = 0; k < 4 && i < count; ++k, ++i)
            pk.indices[i] = static_cast<std::uint8_t>((byte >> (2 * k)) & 0x3);
    }
    return pk;
}

}  // namespace suslab
