#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "oracles.hpp"
#include "suslab/packed.hpp"

using namespace suslab;

namespace {

bool bit_identical(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Packed, SingleGroupExample) {
    DenseMatrix w(1, 4, {1, 2, 3, 4});
    BinaryMatrix bits(1, 4);
    bits.bits = {0, 0, 1, 1};
    Packed24 pk = pack(w, PruneMask::from_bits(bits));
    EXPECT_EQ(pk.values, (std::vector<double>{3, 4}));
    EXPECT_EQ(pk.indices, (std::vector<std::uint8_t>{2, 3}));
}

TEST(Packed, RoundTripMatchesApplyMask) {
    Rng rng(101);
    for (int t = 0; t < 300; ++t) {
        int rows = 1 + static_cast<int>(rng.next_below(6));
        int cols = 4 * (1 + static_cast<int>(rng.next_below(5)));
        DenseMatrix w = oracle::random_matrix(rng, rows, cols, -10.0, 10.0);
        PruneMask m = oracle::random_mask(rng, rows, cols);
        DenseMatrix expect = apply_mask(w, m);
        DenseMatrix got = unpack(pack(w, m));
        EXPECT_TRUE(bit_identical(expect.data, got.data));
    }
}

TEST(Packed, AllNegativeRoundTripsExactly) {
    DenseMatrix w(1, 4, {-0.25, -1.5, -3.0, -4.0});
    PruneMask m = compute_mask_2to4(w);
    DenseMatrix back = unpack(pack(w, m));
    EXPECT_TRUE(bit_identical(apply_mask(w, m).data, back.data));
}

TEST(Packed, IndicesStrictlyIncreasingPerGroup) {
    Rng rng(103);
    DenseMatrix w = oracle::random_matrix(rng, 4, 16);
    Packed24 pk = pack(w, compute_mask_2to4(w));
    for (std::size_t g = 0; g < pk.group_count(); ++g)
        EXPECT_LT(pk.indices[2 * g], pk.indices[2 * g + 1]);
}

TEST(Packed, InvalidMaskRejectedAtConstruction) {
    BinaryMatrix bad(1, 4);
    bad.bits = {1, 0, 0, 0};
    EXPECT_THROW(PruneMask::from_bits(bad), std::invalid_argument);
}

TEST(SparseMatvec, TinyExamples) {
    DenseMatrix w(1, 4, {1, 2, 3, 4});
    BinaryMatrix bits(1, 4);
    bits.bits = {0, 0, 1, 1};
    Packed24 pk = pack(w, PruneMask::from_bits(bits));
    std::vector<double> x = {1, 1, 1, 1};
    EXPECT_EQ(sparse_matvec(pk, x), (std::vector<double>{7}));

    std::vector<double> zero(4, 0.0);
    EXPECT_EQ(sparse_matvec(pk, zero), (std::vector<double>{0}));

    std::vector<double> wrong(5, 0.0);
    EXPECT_THROW(sparse_matvec(pk, wrong), std::invalid_argument);
}

TEST(SparseMatvec, MatchesDenseMaskedOracle) {
    Rng rng(107);
    for (int t = 0; t < 300; ++t) {
        int rows = 1 + static_cast<int>(rng.next_below(8));
        int cols = 4 * (1 + static_cast<int>(rng.next_below(6)));
        DenseMatrix w = oracle::random_matrix(rng, rows, cols, -3.0, 3.0);
        PruneMask m = oracle::random_mask(rng, rows, cols);
        std::vector<double> x(cols);
        for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
        std::vector<double> want = oracle::dense_matvec(apply_mask(w, m), x);
        std::vector<double> got = sparse_matvec(pack(w, m), x);
        for (int r = 0; r < rows; ++r) {
            double scale = std::max(1.0, std::fabs(want[r]));
            EXPECT_NEAR(got[r], want[r], 1e-6 * scale);
        }
    }
}

TEST(PackedIO, SerializationRoundTripIsBitExact) {
    Rng rng(109);
    for (int t = 0; t < 50; ++t) {
        int rows = 1 + static_cast<int>(rng.next_below(5));
        int cols = 4 * (1 + static_cast<int>(rng.next_below(4)));
        DenseMatrix w = oracle::random_matrix(rng, rows, cols, -5.0, 5.0);
        Packed24 pk = pack(w, oracle::random_mask(rng, rows, cols));
        std::stringstream ss;
        save_packed(pk, ss);
        Packed24 back = load_packed(ss);
        EXPECT_EQ(back.rows, pk.rows);
        EXPECT_EQ(back.cols, pk.cols);
        EXPECT_TRUE(bit_identical(back.values, pk.values));
        EXPECT_EQ(back.indices, pk.indices);

        // save again, byte-compare
        std::stringstream ss2;
        save_packed(back, ss2);
        EXPECT_EQ(ss.str(), ss2.str());
    }
}

TEST(PackedIO, HeaderLayout) {
    DenseMatrix w(1, 4, {1, 2, 3, 4});
    Packed24 pk = pack(w, compute_mask_2to4(w));
    std::stringstream ss;
    save_packed(pk, ss);
    std::string bytes = ss.str();
    ASSERT_GE(bytes.size(), 14u);
    EXPECT_EQ(bytes.substr(0, 4), std::string("P24\0", 4));
    EXPECT_EQ(bytes[4], 1);  // version u16 LE
    EXPECT_EQ(bytes[5], 0);
    // n=1, m=4 little-endian
    EXPECT_EQ(bytes[6], 1);
    EXPECT_EQ(bytes[10], 4);
    // 2 values (16 bytes) + 1 index byte
    EXPECT_EQ(bytes.size(), 14u + 16u + 1u);
}

TEST(PackedIO, BadMagicRejected) {
    std::stringstream ss;
    ss << "XXXX";
    EXPECT_THROW(load_packed(ss), std::runtime_error);
}
