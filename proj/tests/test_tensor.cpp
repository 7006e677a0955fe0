#include <gtest/gtest.h>

#include "ginv/rng.hpp"
#include "ginv/tensor.hpp"

using ginv::Rng;
using ginv::Tensor;

TEST(Tensor, ShapeAndFill) {
    Tensor<float> t({2, 3});
    EXPECT_EQ(t.numel(), 6);
    EXPECT_EQ(t.rank(), 2u);
    t.fill(2.5f);
    for (int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(t[i], 2.5f);
    t.reshape({3, 2});
    EXPECT_EQ(t.dim(0), 3);
    EXPECT_THROW(t.reshape({4, 2}), ginv::contract_error);
}

TEST(Tensor, GemmAgainstHandComputed) {
    // A (2x3) * B (3x2)
    Tensor<double> a({2, 3}), b({3, 2}), c({2, 2});
    double av[] = {1, 2, 3, 4, 5, 6};
    double bv[] = {7, 8, 9, 10, 11, 12};
    std::copy(av, av + 6, a.data());
    std::copy(bv, bv + 6, b.data());
    ginv::gemm<double>(a.data(), b.data(), c.data(), 2, 3, 2);
    EXPECT_DOUBLE_EQ(c[0], 58);
    EXPECT_DOUBLE_EQ(c[1], 64);
    EXPECT_DOUBLE_EQ(c[2], 139);
    EXPECT_DOUBLE_EQ(c[3], 154);
}

TEST(Tensor, GemmTransposeFlagsMatchExplicitTranspose) {
    Rng rng(7);
    Tensor<double> a({4, 3}), b({4, 5});
    rng.fill_normal(a);
    rng.fill_normal(b);
    // at (3x4) * b (4x5) via trans_a
    Tensor<double> c1({3, 5});
    ginv::gemm<double>(a.data(), b.data(), c1.data(), 3, 4, 5, true, false);
    Tensor<double> at({3, 4});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) at[j * 4 + i] = a[i * 3 + j];
    Tensor<double> c2({3, 5});
    ginv::gemm<double>(at.data(), b.data(), c2.data(), 3, 4, 5);
    for (int64_t i = 0; i < c1.numel(); ++i) EXPECT_NEAR(c1[i], c2[i], 1e-12);
}

TEST(Tensor, GemmAccumulate) {
    Tensor<double> a({1, 2}), b({2, 1}), c({1, 1});
    a[0] = 1; a[1] = 2;
    b[0] = 3; b[1] = 4;
    c[0] = 100;
    ginv::gemm<double>(a.data(), b.data(), c.data(), 1, 2, 1, false, false, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(c[0], 111);
}

TEST(Rng, DeterministicAcrossInstances) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(43);
    EXPECT_NE(a.next_u64(), c.next_u64());
}

TEST(Rng, UniformRangeAndMoments) {
    Rng rng(1);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sum2 += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.01);
    EXPECT_NEAR(sum2 / n - 0.25, 1.0 / 12.0, 0.01);
}

TEST(Rng, NormalMoments) {
    Rng rng(2);
    double sum = 0, sum2 = 0, sum4 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double g = rng.normal();
        sum += g;
        sum2 += g * g;
        sum4 += g * g * g * g;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.02);
    EXPECT_NEAR(sum2 / n, 1.0, 0.02);
    EXPECT_NEAR(sum4 / n, 3.0, 0.15);  // gaussian kurtosis
}

TEST(Rng, DerivedSeedsSeparateStreams) {
    uint64_t s1 = ginv::derive_seed({1, 2, 3});
    uint64_t s2 = ginv::derive_seed({1, 2, 4});
    uint64_t s3 = ginv::derive_seed({1, 2, 3});
    EXPECT_NE(s1, s2);
    EXPECT_EQ(s1, s3);
}

TEST(Rng, BelowIsUnbiasedEnough) {
    Rng rng(9);
    int counts[10] = {};
    for (int i = 0; i < 100000; ++i) counts[rng.below(10)]++;
    for (int c : counts) EXPECT_NEAR(c, 10000, 450);
}
