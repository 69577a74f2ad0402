#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "suslab/sparsity.hpp"

using namespace suslab;

namespace {

DenseMatrix row_matrix(std::vector<double> vals) {
    int n = static_cast<int>(vals.size());
    return DenseMatrix(1, n, std::move(vals));
}

std::vector<std::uint8_t> bits_of(const PruneMask& m) { return m.bits().bits; }

}  // namespace

TEST(ComputeMask, MagnitudeOrdering) {
    PruneMask m = compute_mask_2to4(row_matrix({0.1, -0.5, 0.3, 0.2}));
    EXPECT_EQ(bits_of(m), (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(ComputeMask, AllTieLowestIndexWins) {
    PruneMask m = compute_mask_2to4(row_matrix({0, 0, 0, 0}));
    EXPECT_EQ(bits_of(m), (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(ComputeMask, TwoGroups) {
    PruneMask m = compute_mask_2to4(row_matrix({1, 2, 3, 4, 5, 6, 7, 8}));
    EXPECT_EQ(bits_of(m), (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST(ComputeMask, BadColsThrows) {
    EXPECT_THROW(compute_mask_2to4(DenseMatrix(2, 6)), std::invalid_argument);
    DenseMatrix nan(1, 4);
    nan.data[2] = std::nan("");
    EXPECT_THROW(compute_mask_2to4(nan), std::invalid_argument);
}

TEST(ComputeMask, TwoPerGroupAlwaysAndOracleAgrees) {
    Rng rng(42);
    for (int t = 0; t < 200; ++t) {
        int rows = 1 + static_cast<int>(rng.next_below(6));
        int cols = 4 * (1 + static_cast<int>(rng.next_below(4)));
        DenseMatrix w = oracle::random_matrix(rng, rows, cols);
        if (t % 3 == 0) {  // inject ties
            w.data[rng.next_below(w.data.size())] = 0.25;
            w.data[rng.next_below(w.data.size())] = -0.25;
        }
        PruneMask m = compute_mask_2to4(w);
        EXPECT_NO_THROW(PruneMask::validate(m.bits()));
        EXPECT_EQ(m.bits(), oracle::mask_2to4(w));
    }
}

TEST(ApplyMask, Basics) {
    DenseMatrix w = row_matrix({1, 2, 3, 4});
    BinaryMatrix m(1, 4);
    m.bits = {0, 0, 1, 1};
    EXPECT_EQ(apply_mask(w, m).data, (std::vector<double>{0, 0, 3, 4}));

    DenseMatrix neg = row_matrix({-1, -2, -3, -4});
    EXPECT_EQ(apply_mask(neg, m).data, (std::vector<double>{0, 0, -3, -4}));

    BinaryMatrix ones(1, 4);
    ones.bits = {1, 1, 1, 1};
    EXPECT_EQ(apply_mask(w, ones).data, w.data);

    BinaryMatrix wrong(2, 4);
    EXPECT_THROW(apply_mask(w, wrong), std::invalid_argument);
}

TEST(ComplementMask, InvolutionAndPartition) {
    PruneMask m = compute_mask_2to4(row_matrix({0.1, -0.5, 0.3, 0.2}));
    BinaryMatrix comp = complement_mask(m);
    EXPECT_EQ(comp.bits, (std::vector<std::uint8_t>{1, 0, 0, 1}));
    EXPECT_EQ(complement_mask(comp), m.bits());
    EXPECT_EQ(m.bits().popcount() + comp.popcount(), static_cast<std::size_t>(4));

    Rng rng(7);
    DenseMatrix w = oracle::random_matrix(rng, 5, 8);
    PruneMask mw = compute_mask_2to4(w);
    EXPECT_EQ(mw.bits().popcount() + complement_mask(mw).popcount(), w.data.size());
}

TEST(UpperBoundL1, FrozenExamples) {
    // via per-row sort oracle: top-4 of 1..8 = 5+6+7+8
    DenseMatrix w = row_matrix({1, 2, 3, 4, 5, 6, 7, 8});
    EXPECT_DOUBLE_EQ(oracle::upper_bound_l1(w), 26.0);
    EXPECT_DOUBLE_EQ(upper_bound_l1(w), 26.0);

    EXPECT_DOUBLE_EQ(upper_bound_l1(DenseMatrix(3, 8)), 0.0);

    DenseMatrix m2 = row_matrix({-9, 1, -8, 2});
    EXPECT_DOUBLE_EQ(oracle::upper_bound_l1(m2), 17.0);
    EXPECT_DOUBLE_EQ(upper_bound_l1(m2), 17.0);
}

TEST(UpperBoundL1, MatchesOracleOnRandom) {
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 1 + static_cast<int>(rng.next_below(8)), 16);
        EXPECT_NEAR(upper_bound_l1(w), oracle::upper_bound_l1(w), 1e-12);
    }
}

TEST(MagnitudeReport, NoPermutation) {
    DenseMatrix w = row_matrix({1, 2, 3, 4, 5, 6, 7, 8});
    MagnitudeReport rep = magnitude_report(w);
    EXPECT_DOUBLE_EQ(rep.l1_pruned, 22.0);  // (3+4)+(7+8)
    EXPECT_DOUBLE_EQ(rep.l1_upper, 26.0);
    EXPECT_NEAR(rep.mag_r, 22.0 / 26.0, 1e-15);
}

TEST(MagnitudeReport, OptimalPermutationReachesBound) {
    DenseMatrix w = row_matrix({1, 2, 3, 4, 5, 6, 7, 8});
    // columns for values {1,2,7,8} then {3,4,5,6}
    ColumnPermutation p;
    p.map = {0, 1, 6, 7, 2, 3, 4, 5};
    MagnitudeReport rep = magnitude_report(w, &p);
    EXPECT_DOUBLE_EQ(rep.l1_pruned, 26.0);  // (7+8)+(5+6)
    EXPECT_DOUBLE_EQ(rep.mag_r, 1.0);
}

TEST(MagnitudeReport, BoundAttainedGivesExactlyOne) {
    // every group already holds its row's global top pairs
    DenseMatrix w(2, 8, {9, 8, 0.1, 0.2, 7, 6, 0.3, 0.1, 5, 4, 0.2, 0.3, 9, 9, 0.1, 0.4});
    MagnitudeReport rep = magnitude_report(w);
    EXPECT_EQ(rep.mag_r, 1.0);
    EXPECT_EQ(rep.l1_pruned, rep.l1_upper);
}

TEST(MagnitudeReport, AllZeroConvention) {
    MagnitudeReport rep = magnitude_report(DenseMatrix(2, 8));
    EXPECT_DOUBLE_EQ(rep.mag_r, 1.0);
    EXPECT_DOUBLE_EQ(rep.l1_pruned, 0.0);
    EXPECT_DOUBLE_EQ(rep.l1_upper, 0.0);
}

TEST(PermuteColumns, Basics) {
    DenseMatrix w = row_matrix({1, 2, 3, 4});
    ColumnPermutation rev;
    rev.map = {3, 2, 1, 0};
    EXPECT_EQ(permute_columns(w, rev).data, (std::vector<double>{4, 3, 2, 1}));
    EXPECT_EQ(permute_columns(w, ColumnPermutation::identity(4)).data, w.data);

    Rng rng(3);
    DenseMatrix m = oracle::random_matrix(rng, 4, 12);
    ColumnPermutation p = oracle::random_permutation(rng, 12);
    EXPECT_EQ(permute_columns(permute_columns(m, p), p.inverse()).data, m.data);

    ColumnPermutation bad;
    bad.map = {0, 1};
    EXPECT_THROW(permute_columns(w, bad), std::invalid_argument);
}

TEST(PermuteColumns, FunctionalInvariance) {
    // (W*P) applied to correspondingly permuted x equals W*x
    Rng rng(17);
    for (int t = 0; t < 50; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 5, 16);
        ColumnPermutation p = oracle::random_permutation(rng, 16);
        std::vector<double> x(16);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        std::vector<double> xp(16);
        for (int j = 0; j < 16; ++j) xp[j] = x[p.map[j]];
        std::vector<double> y0 = oracle::dense_matvec(w, x);
        std::vector<double> y1 = oracle::dense_matvec(permute_columns(w, p), xp);
        for (int r = 0; r < 5; ++r) EXPECT_NEAR(y0[r], y1[r], 1e-9);
    }
}

TEST(SearchPermutation, ReachesOptimumOnLadder) {
    DenseMatrix w = row_matrix({1, 2, 3, 4, 5, 6, 7, 8});
    ColumnPermutation p = search_permutation(w);
    MagnitudeReport rep = magnitude_report(w, &p);
    EXPECT_DOUBLE_EQ(rep.l1_pruned, 26.0);
    EXPECT_DOUBLE_EQ(rep.mag_r, 1.0);
}

TEST(SearchPermutation, IdentityWhenBoundAlreadyMet) {
    DenseMatrix w(1, 8, {9, 8, 0.1, 0.2, 7, 6, 0.3, 0.1});
    EXPECT_TRUE(search_permutation(w).is_identity());
}

TEST(SearchPermutation, SingleGroupIsIdentity) {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 3, 4);
        EXPECT_TRUE(search_permutation(w).is_identity());
    }
}

TEST(SearchPermutation, MatchesExhaustiveOracleM8) {
    Rng rng(23);
    for (int t = 0; t < 200; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 1 + static_cast<int>(rng.next_below(6)), 8);
        ColumnPermutation p = search_permutation(w);
        double got = masked_l1(permute_columns(w, p), compute_mask_2to4(permute_columns(w, p)).bits());
        EXPECT_NEAR(got, oracle::best_l1_partitions_m8(w), 1e-9);
    }
}

TEST(SearchPermutation, PartitionOracleEqualsFullOrderOracle) {
    // validates the partition reduction against all 8! column orders
    Rng rng(29);
    for (int t = 0; t < 3; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 2, 8);
        EXPECT_NEAR(oracle::best_l1_partitions_m8(w), oracle::best_l1_all_orders(w), 1e-12);
    }
}

TEST(SearchPermutation, SandwichInequality) {
    Rng rng(31);
    for (int t = 0; t < 300; ++t) {
        int rows = 1 + static_cast<int>(rng.next_below(8));
        int cols = (t % 2 == 0) ? 8 : 16;
        DenseMatrix w = oracle::random_matrix(rng, rows, cols);
        ColumnPermutation p = search_permutation(w);
        double base = masked_l1(w, compute_mask_2to4(w).bits());
        DenseMatrix wp = permute_columns(w, p);
        double permuted = masked_l1(wp, compute_mask_2to4(wp).bits());
        double upper = upper_bound_l1(w);
        EXPECT_LE(base, permuted + 1e-12);
        EXPECT_LE(permuted, upper + 1e-12);
    }
}

TEST(SearchPermutation, GreedyNeverWorseThanIdentity) {
    Rng rng(37);
    for (int t = 0; t < 30; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 6, 32);
        ColumnPermutation p = search_permutation(w);
        DenseMatrix wp = permute_columns(w, p);
        EXPECT_GE(masked_l1(wp, compute_mask_2to4(wp).bits()),
                  masked_l1(w, compute_mask_2to4(w).bits()) - 1e-12);
    }
}

TEST(FlattenConv, ShapeAndRoundTrip) {
    ConvShape shape{2, 1, 2, 2};
    std::vector<double> t = {1, 2, 3, 4, 5, 6, 7, 8};
    DenseMatrix m = flatten_conv(t, shape);
    EXPECT_EQ(m.rows, 2);
    EXPECT_EQ(m.cols, 4);
    EXPECT_EQ(unflatten_conv(m, shape), t);

    ConvShape bad{2, 1, 3, 1};  // 3 columns
    EXPECT_THROW(flatten_conv(std::vector<double>(6), bad), std::invalid_argument);
}

TEST(FlattenConv, MaskOnFlattenedObeys24) {
    Rng rng(41);
    ConvShape shape{3, 2, 2, 2};
    std::vector<double> t(shape.volume());
    for (double& v : t) v = rng.next_uniform(-1.0, 1.0);
    DenseMatrix m = flatten_conv(t, shape);
    PruneMask mask = compute_mask_2to4(m);
    EXPECT_EQ(mask.bits(), oracle::mask_2to4(m));
}

TEST(PruneMaskType, ValidatorRejectsBadMasks) {
    BinaryMatrix bad(1, 4);
    bad.bits = {1, 1, 1, 0};
    EXPECT_THROW(PruneMask::from_bits(bad), std::invalid_argument);
    bad.bits = {1, 1, 0, 0};
    EXPECT_NO_THROW(PruneMask::from_bits(bad));
    bad.bits = {2, 0, 0, 0};
    EXPECT_THROW(PruneMask::from_bits(bad), std::invalid_argument);
}

TEST(UpperBound, EqualityIffTopPairsPerGroup) {
    // equality direction: masked L1 == upper bound iff each row's top half
    // sits 2 per group (checked both ways against the oracle)
    Rng rng(43);
    for (int t = 0; t < 100; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 2, 8);
        PruneMask m = compute_mask_2to4(w);
        double l1 = masked_l1(w, m.bits());
        double ub = upper_bound_l1(w);
        EXPECT_LE(l1, ub + 1e-12);
        bool equal = l1 == ub;
        // oracle: per row, retained set must equal the top-4 set
        bool top_aligned = true;
        for (int r = 0; r < w.rows && top_aligned; ++r) {
            std::vector<int> idx(8);
            std::iota(idx.begin(), idx.end(), 0);
            std::sort(idx.begin(), idx.end(), [&](int a, int b) {
                return std::fabs(w.at(r, a)) > std::fabs(w.at(r, b));
            });
            double thresh = std::fabs(w.at(r, idx[3]));
            for (int c = 0; c < 8; ++c) {
                bool kept = m.at(r, c) != 0;
                if (kept && std::fabs(w.at(r, c)) < thresh) top_aligned = false;
                if (!kept && std::fabs(w.at(r, c)) > thresh) top_aligned = false;
            }
        }
        EXPECT_EQ(equal, top_aligned) << "case " << t;
    }

    // constructed aligned cases: top half placed 2 per group, equality exact
    for (int t = 0; t < 20; ++t) {
        DenseMatrix w = oracle::random_matrix(rng, 3, 8, -0.4, 0.4);
        for (int r = 0; r < w.rows; ++r)
            for (int g = 0; g < 2; ++g) {
                w.at(r, 4 * g) = rng.next_uniform(1.0, 2.0);
                w.at(r, 4 * g + 3) = -rng.next_uniform(1.0, 2.0);
            }
        PruneMask m = compute_mask_2to4(w);
        EXPECT_EQ(masked_l1(w, m.bits()), upper_bound_l1(w));
    }
}
