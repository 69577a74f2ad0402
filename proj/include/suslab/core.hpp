#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace suslab {

/// Row-major dense real matrix. Values are 64-bit throughout; the packed
/// codec and checkpoint formats preserve exact bit patterns.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // length rows*cols, row-major

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("DenseMatrix: dimensions must be positive");
    }
    DenseMatrix(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("DenseMatrix: dimensions must be positive");
        if (data.size() != static_cast<std::size_t>(r) * c)
            throw std::invalid_argument("DenseMatrix: data length does not match rows*cols");
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Raw binary matrix. Used for mask complements and update gating, where
/// the 2:4 retention invariant intentionally does not hold.
struct BinaryMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> bits;  // values in {0,1}, row-major

    BinaryMatrix() = default;
    BinaryMatrix(int r, int c) : rows(r), cols(c), bits(static_cast<std::size_t>(r) * c, 0) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("BinaryMatrix: dimensions must be positive");
    }

    std::uint8_t& at(int r, int c) { return bits[static_cast<std::size_t>(r) * cols + c]; }
    std::uint8_t at(int r, int c) const { return bits[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t popcount() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    bool operator==(const BinaryMatrix& o) const {
        return rows == o.rows && cols == o.cols && bits == o.bits;
    }
};

/// Binary mask with the 2:4 retention invariant: in every row, exactly 2 of
/// every 4 consecutive bits are set. Construct via compute_mask_2to4 or
/// from_bits (which validates).
class PruneMask {
  public:
    static PruneMask from_bits(BinaryMatrix m) {
        validate(m);
        return PruneMask(std::move(m));
    }

    const BinaryMatrix& bits() const { return bits_; }
    int rows() const { return bits_.rows; }
    int cols() const { return bits_.cols; }
    std::uint8_t at(int r, int c) const { return bits_.at(r, c); }

    bool operator==(const PruneMask& o) const { return bits_ == o.bits_; }

    static void validate(const BinaryMatrix& m) {
        if (m.cols % 4 != 0)
            throw std::invalid_argument("PruneMask: cols must be divisible by 4");
        for (int r = 0; r < m.rows; ++r) {
            for (int g = 0; g < m.cols / 4; ++g) {
                int kept = 0;
                for (int k = 0; k < 4; ++k) {
                    std::uint8_t b = m.at(r, 4 * g + k);
                    if (b != 0 && b != 1)
                        throw std::invalid_argument("PruneMask: bits must be 0 or 1");
                    kept += b;
                }
                if (kept != 2)
                    throw std::invalid_argument(
                        "PruneMask: group (" + std::to_string(r) + "," + std::to_string(g) +
                        ") retains " + std::to_string(kept) + " of 4, expected 2");
            }
        }
    }

  private:
    explicit PruneMask(BinaryMatrix m) : bits_(std::move(m)) {}
    friend PruneMask compute_mask_2to4(const DenseMatrix&);

    BinaryMatrix bits_;
};

/// Column permutation as an index vector: output column j comes from input
/// column map[j]. This orientation is fixed project-wide.
struct ColumnPermutation {
    std::vector<int> map;

    static ColumnPermutation identity(int m) {
        ColumnPermutation p;
        p.map.resize(m);
        std::iota(p.map.begin(), p.map.end(), 0);
        return p;
    }

    int size() const { return static_cast<int>(map.size()); }

    bool is_identity() const {
        for (int j = 0; j < size(); ++j)
            if (map[j] != j) return false;
        return true;
    }

    ColumnPermutation inverse() const {
        ColumnPermutation inv;
        inv.map.assign(map.size(), -1);
        for (int j = 0; j < size(); ++j) inv.map[map[j]] = j;
        return inv;
    }

    void validate() const {
        std::vector<char> seen(map.size(), 0);
        for (int v : map) {
            if (v < 0 || v >= size() || seen[v])
                throw std::invalid_argument("ColumnPermutation: map is not a bijection");
            seen[v] = 1;
        }
    }

    bool operator==(const ColumnPermutation& o) const { return map == o.map; }
};

}  // namespace suslab
