#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "suslab/core.hpp"

namespace suslab {

namespace detail {

inline void require_groupable(const DenseMatrix& w) {
    if (w.cols % 4 != 0)
        throw std::invalid_argument("2:4 sparsity requires cols divisible by 4, got " +
                                    std::to_string(w.cols));
}

/// Sum of magnitudes in descending order. All L1 reductions in this module
/// go through here: identical multisets produce bit-identical sums, which is
/// what makes mag_r == 1.0 an exact (not approximate) condition.
inline double ordered_abs_sum(std::vector<double>& mags) {
    std::sort(mags.begin(), mags.end(), std::greater<double>());
    double s = 0.0;
    for (double v : mags) s += v;
    return s;
}

/// Indices 0..3 of a 4-element group ordered by descending magnitude,
/// ties broken by lowest index.
inline std::array<int, 4> group_order(const double* g) {
    std::array<int, 4> idx = {0, 1, 2, 3};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        double ma = std::fabs(g[a]), mb = std::fabs(g[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    return idx;
}

inline double top2_abs_sum(double a, double b, double c, double d) {
    std::array<double, 4> v = {std::fabs(a), std::fabs(b), std::fabs(c), std::fabs(d)};
    std::sort(v.begin(), v.end());
    return v[3] + v[2];
}

}  // namespace detail

/// Magnitude-based 2:4 mask: per row, per group of 4 consecutive columns,
/// retain the 2 entries with the largest absolute values. Ties break toward
/// the lowest column index, so masks are deterministic.
inline PruneMask compute_mask_2to4(const DenseMatrix& w) {
    detail::require_groupable(w);
    if (!w.all_finite()) throw std::invalid_argument("compute_mask_2to4: non-finite values");
    BinaryMatrix m(w.rows, w.cols);
    for (int r = 0; r < w.rows; ++r) {
        const double* row = &w.data[static_cast<std::size_t>(r) * w.cols];
        for (int g = 0; g < w.cols / 4; ++g) {
            auto order = detail::group_order(row + 4 * g);
            m.at(r, 4 * g + order[0]) = 1;
            m.at(r, 4 * g + order[1]) = 1;
        }
    }
    return PruneMask(std::move(m));
}

/// Hadamard product with a binary mask; masked-out positions are exactly 0.0.
inline DenseMatrix apply_mask(const DenseMatrix& w, const BinaryMatrix& m) {
    if (w.rows != m.rows || w.cols != m.cols)
        throw std::invalid_argument("apply_mask: shape mismatch");
    DenseMatrix out(w.rows, w.cols);
    for (std::size_t i = 0; i < w.data.size(); ++i) out.data[i] = m.bits[i] ? w.data[i] : 0.0;
    return out;
}

inline DenseMatrix apply_mask(const DenseMatrix& w, const PruneMask& m) {
    return apply_mask(w, m.bits());
}

/// Bitwise complement. The result retains the pruned half and so violates
/// the 2:4 retention invariant by construction; it is a raw binary matrix.
inline BinaryMatrix complement_mask(const BinaryMatrix& m) {
    BinaryMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.bits.size(); ++i) out.bits[i] = m.bits[i] ? 0 : 1;
    return out;
}

inline BinaryMatrix complement_mask(const PruneMask& m) { return complement_mask(m.bits()); }

/// Upper bound on the retained L1 under any 2:4 grouping: per row, the sum
/// of the m/2 largest magnitudes.
inline double upper_bound_l1(const DenseMatrix& w) {
    detail::require_groupable(w);
    double total = 0.0;
    std::vector<double> mags(w.cols);
    for (int r = 0; r < w.rows; ++r) {
        for (int c = 0; c < w.cols; ++c) mags[c] = std::fabs(w.at(r, c));
        std::sort(mags.begin(), mags.end(), std::greater<double>());
        mags.resize(w.cols / 2);
        double row_sum = 0.0;
        for (double v : mags) row_sum += v;
        total += row_sum;
        mags.resize(w.cols);
    }
    return total;
}

/// L1 norm of w masked by m, reduced in the same fixed order as
/// upper_bound_l1 so that equality of the retained set per row implies
/// bit-exact equality of the sums.
inline double masked_l1(const DenseMatrix& w, const BinaryMatrix& m) {
    if (w.rows != m.rows || w.cols != m.cols)
        throw std::invalid_argument("masked_l1: shape mismatch");
    double total = 0.0;
    std::vector<double> mags;
    for (int r = 0; r < w.rows; ++r) {
        mags.clear();
        for (int c = 0; c < w.cols; ++c)
            if (m.at(r, c)) mags.push_back(std::fabs(w.at(r, c)));
        total += detail::ordered_abs_sum(mags);
    }
    return total;
}

/// Output column j is input column map[j].
inline DenseMatrix permute_columns(const DenseMatrix& w, const ColumnPermutation& p) {
    if (p.size() != w.cols)
        throw std::invalid_argument("permute_columns: permutation length does not match cols");
    p.validate();
    DenseMatrix out(w.rows, w.cols);
    for (int r = 0; r < w.rows; ++r)
        for (int j = 0; j < w.cols; ++j) out.at(r, j) = w.at(r, p.map[j]);
    return out;
}

inline BinaryMatrix permute_columns(const BinaryMatrix& m, const ColumnPermutation& p) {
    if (p.size() != m.cols)
        throw std::invalid_argument("permute_columns: permutation length does not match cols");
    BinaryMatrix out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int j = 0; j < m.cols; ++j) out.at(r, j) = m.at(r, p.map[j]);
    return out;
}

struct MagnitudeReport {
    double l1_pruned = 0.0;  // ||W_2:4||_1 (of the permuted matrix when a permutation is given)
    double l1_upper = 0.0;   // ||W*_2:4||_1, permutation-invariant
    double mag_r = 1.0;      // l1_pruned / l1_upper; 1 for an all-zero matrix
};

inline MagnitudeReport magnitude_report(const DenseMatrix& w,
                                        const ColumnPermutation* perm = nullptr) {
    detail::require_groupable(w);
    MagnitudeReport rep;
    rep.l1_upper = upper_bound_l1(w);
    DenseMatrix wp = perm ? permute_columns(w, *perm) : w;
    PruneMask mask = compute_mask_2to4(wp);
    rep.l1_pruned = masked_l1(wp, mask.bits());
    rep.mag_r = rep.l1_upper > 0.0 ? rep.l1_pruned / rep.l1_upper : 1.0;
    return rep;
}

struct SearchBudget {
    int max_sweeps = 100;  // hill-climb sweep cap for cols > 8
};

namespace detail {

/// Retained-L1 of the grouping where position p holds column cols[p].
inline double grouping_score(const DenseMatrix& w, const std::vector<int>& cols) {
    double total = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        const double* row = &w.data[static_cast<std::size_t>(r) * w.cols];
        for (int g = 0; g < w.cols / 4; ++g)
            total += top2_abs_sum(row[cols[4 * g]], row[cols[4 * g + 1]], row[cols[4 * g + 2]],
                                  row[cols[4 * g + 3]]);
    }
    return total;
}

/// Score restricted to two groups (for swap deltas).
inline double two_group_score(const DenseMatrix& w, const std::vector<int>& cols, int ga, int gb) {
    double total = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        const double* row = &w.data[static_cast<std::size_t>(r) * w.cols];
        for (int g : {ga, gb})
            total += top2_abs_sum(row[cols[4 * g]], row[cols[4 * g + 1]], row[cols[4 * g + 2]],
                                  row[cols[4 * g + 3]]);
    }
    return total;
}

/// Canonical permutation for a set partition into 4-column groups: groups
/// ordered by smallest member, members ascending. The identity partition
/// maps to the identity permutation.
inline ColumnPermutation grouping_to_permutation(std::vector<std::vector<int>> groups) {
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    ColumnPermutation p;
    for (const auto& g : groups)
        for (int c : g) p.map.push_back(c);
    return p;
}

/// Enumerate all partitions of {0..m-1} into unordered groups of 4. The
/// smallest unassigned column anchors each group, so each partition appears
/// exactly once (35 partitions for m = 8).
inline void enumerate_partitions(int m, std::vector<int>& pool,
                                 std::vector<std::vector<int>>& current,
                                 const std::function<void(const std::vector<std::vector<int>>&)>& visit) {
    if (pool.empty()) {
        visit(current);
        return;
    }
    int anchor = pool.front();
    std::vector<int> rest(pool.begin() + 1, pool.end());
    int n = static_cast<int>(rest.size());
    // choose 3 companions for the anchor
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            for (int c = b + 1; c < n; ++c) {
                current.push_back({anchor, rest[a], rest[b], rest[c]});
                std::vector<int> next;
                for (int i = 0; i < n; ++i)
                    if (i != a && i != b && i != c) next.push_back(rest[i]);
                enumerate_partitions(m, next, current, visit);
                current.pop_back();
            }
}

}  // namespace detail

/// Search for a column permutation maximizing the retained L1 after 2:4
/// pruning. Exhaustive over all distinct group assignments for cols <= 8;
/// greedy pairwise-column-swap hill climbing to a local optimum otherwise.
/// The result never scores below the identity grouping, and when the
/// identity already attains the upper bound the identity map is returned.
inline ColumnPermutation search_permutation(const DenseMatrix& w, SearchBudget budget = {}) {
    detail::require_groupable(w);
    const int m = w.cols;

    // Bound already attained: nothing to gain, keep column order.
    PruneMask base_mask = compute_mask_2to4(w);
    if (masked_l1(w, base_mask.bits()) == upper_bound_l1(w)) return ColumnPermutation::identity(m);

    std::vector<int> cols(m);
    std::iota(cols.begin(), cols.end(), 0);

    if (m <= 8) {
        double best = detail::grouping_score(w, cols);
        std::vector<std::vector<int>> best_groups;
        for (int g = 0; g < m / 4; ++g)
            best_groups.push_back({4 * g, 4 * g + 1, 4 * g + 2, 4 * g + 3});

        std::vector<int> pool = cols;
        std::vector<std::vector<int>> current;
        detail::enumerate_partitions(m, pool, current, [&](const std::vector<std::vector<int>>& groups) {
            std::vector<int> flat;
            for (const auto& g : groups) flat.insert(flat.end(), g.begin(), g.end());
            double score = detail::grouping_score(w, flat);
            if (score > best) {
                best = score;
                best_groups = groups;
            }
        });
        return detail::grouping_to_permutation(best_groups);
    }

    // Greedy pairwise swaps between groups, best improvement per sweep.
    for (int sweep = 0; sweep < budget.max_sweeps; ++sweep) {
        double best_delta = 0.0;
        int best_i = -1, best_j = -1;
        for (int i = 0; i < m; ++i) {
            for (int j = i + 1; j < m; ++j) {
                int gi = i / 4, gj = j / 4;
                if (gi == gj) continue;
                double before = detail::two_group_score(w, cols, gi, gj);
                std::swap(cols[i], cols[j]);
                double after = detail::two_group_score(w, cols, gi, gj);
                std::swap(cols[i], cols[j]);
                double delta = after - before;
                if (delta > best_delta) {
                    best_delta = delta;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_i < 0) break;
        std::swap(cols[best_i], cols[best_j]);
    }

    std::vector<std::vector<int>> groups(m / 4);
    for (int g = 0; g < m / 4; ++g)
        groups[g].assign(cols.begin() + 4 * g, cols.begin() + 4 * g + 4);
    return detail::grouping_to_permutation(groups);
}

/// 4-D Conv weight shape [out_ch, in_ch, kh, kw].
struct ConvShape {
    int out_ch = 0;
    int in_ch = 0;
    int kh = 0;
    int kw = 0;

    std::size_t volume() const {
        return static_cast<std::size_t>(out_ch) * in_ch * kh * kw;
    }
    int flat_cols() const { return in_ch * kh * kw; }
};

/// Flatten a Conv weight tensor to 2-D: one row per output channel, columns
/// in (in_ch, kh, kw) lexicographic order. Pure reshape, invertible.
inline DenseMatrix flatten_conv(const std::vector<double>& weights, const ConvShape& shape) {
    if (shape.out_ch <= 0 || shape.in_ch <= 0 || shape.kh <= 0 || shape.kw <= 0)
        throw std::invalid_argument("flatten_conv: dimensions must be positive");
    if (weights.size() != shape.volume())
        throw std::invalid_argument("flatten_conv: data length does not match shape");
    if (shape.flat_cols() % 4 != 0)
        throw std::invalid_argument("flatten_conv: in_ch*kh*kw must be divisible by 4");
    return DenseMatrix(shape.out_ch, shape.flat_cols(), weights);
}

inline std::vector<double> unflatten_conv(const DenseMatrix& m, const ConvShape& shape) {
    if (m.rows != shape.out_ch || m.cols != shape.flat_cols())
        throw std::invalid_argument("unflatten_conv: matrix does not match shape");
    return m.data;
}

}  // namespace suslab
