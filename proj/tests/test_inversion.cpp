#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ginv/inversion.hpp"
#include "toy_affine.hpp"

using ginv::InversionConfig;
using ginv::Rng;
using ginv::Tensor;
using ginv::ToyAffineGen;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

// query q: a class-(q%3) image with pixel noise, plus its ground truth class
Tensor<double> make_query(const ToyAffineGen<double>& G, int64_t q, int* c_true) {
    Rng rng(ginv::derive_seed({55, static_cast<uint64_t>(q)}));
    const int c = static_cast<int>(q % 3);
    *c_true = c;
    Tensor<double> z({1, 2});
    z[0] = rng.normal();
    z[1] = rng.normal();
    auto ws = G.make_ws();
    const Tensor<double>& img = G.forward(z, {c}, ws, false);
    Tensor<double> x({ToyAffineGen<double>::kPixels});
    for (int64_t p = 0; p < x.numel(); ++p)
        x[p] = img[p] + rng.uniform(-0.3, 0.3);
    return x;
}

InversionConfig toy_config(int64_t image_index) {
    InversionConfig cfg;
    cfg.steps = 600;
    cfg.restarts = 4;
    cfg.alpha = 0.05;
    cfg.beta = 0.5;
    cfg.seed = 7;
    cfg.image_index = image_index;
    return cfg;
}

}  // namespace

TEST(LogPrior, MatchesPerDimensionDensityAverage) {
    // oracle: average of per-dimension standard-normal log densities
    Rng rng(31);
    for (int64_t d : {1, 2, 7, 100}) {
        Tensor<double> z({d});
        rng.fill_normal(z);
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double pdf = std::exp(-0.5 * z[i] * z[i]) / std::sqrt(2.0 * M_PI);
            acc += std::log(pdf);
        }
        const double want = acc / static_cast<double>(d);
        EXPECT_NEAR(ginv::log_prior(z), want, 1e-12) << "d=" << d;
    }
}

TEST(LogPrior, HandComputedValues) {
    Tensor<double> z0({5});
    z0.zero();
    EXPECT_NEAR(ginv::log_prior(z0), -0.9189385332046727, 1e-12);
    Tensor<double> z({2});
    z[0] = 1.0;
    z[1] = -1.0;
    EXPECT_NEAR(ginv::log_prior(z), -0.5 - 0.9189385332046727, 1e-12);
}

TEST(InversionLoss, MatchesHandComposition) {
    ToyAffineGen<double> G;
    Tensor<double> z({2});
    z[0] = 0.4;
    z[1] = -1.2;
    Tensor<double> x({4});
    for (int64_t p = 0; p < 4; ++p) x[p] = 0.1 * static_cast<double>(p) - 0.2;
    const int c = 1;

    const double* A = G.A(c);
    const double* b = G.b(c);
    double sse = 0.0;
    for (int64_t p = 0; p < 4; ++p) {
        const double r = A[p * 2] * z[0] + A[p * 2 + 1] * z[1] + b[p] - x[p];
        sse += r * r;
    }
    const double lp = -(z[0] * z[0] + z[1] * z[1]) / 4.0 - kHalfLog2Pi;
    EXPECT_NEAR(ginv::inversion_loss(G, x, z, c, 0.5), std::sqrt(sse + 1e-12) - 0.5 * lp, 1e-12);
    EXPECT_NEAR(ginv::inversion_loss(G, x, z, c, 0.0), std::sqrt(sse + 1e-12), 1e-12);
}

TEST(Inversion, ZeroResidualIsFixedPointWithoutPrior) {
    // with beta=0 an exact reconstruction has zero gradient: z must not move
    ToyAffineGen<double> G;
    Tensor<double> z0({1, 2});
    z0[0] = 0.8;
    z0[1] = -0.3;
    auto ws = G.make_ws();
    Tensor<double> targets({1, 4});
    {
        const Tensor<double>& img = G.forward(z0, {2}, ws, false);
        std::copy(img.data(), img.data() + 4, targets.data());
    }
    InversionConfig cfg;
    cfg.steps = 50;
    cfg.restarts = 1;
    cfg.beta = 0.0;
    cfg.alpha = 0.1;
    auto out = ginv::detail::invert_batch(G, targets, {2}, z0, cfg);
    EXPECT_NEAR(out.z[0], 0.8, 1e-15);
    EXPECT_NEAR(out.z[1], -0.3, 1e-15);
    EXPECT_NEAR(out.loss[0], 1e-6, 1e-12);  // sqrt of the 1e-12 floor
    for (int64_t p = 0; p < 4; ++p) EXPECT_DOUBLE_EQ(out.images[p], targets[p]);
}

TEST(Inversion, DescentStepMatchesFiniteDifferenceGradient) {
    // recover the production gradient from a single descent step and compare
    // against central differences of the scalar loss
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 3, &c_true);
    Tensor<double> z0({1, 2});
    z0[0] = 0.3;
    z0[1] = -0.7;

    const double alpha = 0.01;
    InversionConfig cfg;
    cfg.steps = 1;
    cfg.restarts = 1;
    cfg.alpha = alpha;
    cfg.beta = 0.5;
    Tensor<double> targets({1, 4});
    std::copy(x.data(), x.data() + 4, targets.data());
    auto out = ginv::detail::invert_batch(G, targets, {c_true}, z0, cfg);

    for (int64_t i = 0; i < 2; ++i) {
        const double analytic = (z0[i] - out.z[i]) / alpha;
        Tensor<double> zp = z0;
        const double h = 1e-6;
        zp[i] = z0[i] + h;
        const double fp = ginv::inversion_loss(G, x, zp, c_true, cfg.beta);
        zp[i] = z0[i] - h;
        const double fm = ginv::inversion_loss(G, x, zp, c_true, cfg.beta);
        const double fd = (fp - fm) / (2.0 * h);
        EXPECT_NEAR(analytic, fd, 1e-7 * std::max(1.0, std::fabs(fd))) << "dim " << i;
    }
}

TEST(Inversion, RestartOutcomesIndependentOfRestartCount) {
    // restart r is seeded by (master, image, class, r) alone, so adding more
    // restarts must not change earlier ones
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 5, &c_true);
    InversionConfig small = toy_config(5);
    small.steps = 80;
    small.restarts = 3;
    small.snapshot_steps = {80};
    InversionConfig big = small;
    big.restarts = 6;

    auto rs = ginv::invert(G, x, c_true, small);
    auto rb = ginv::invert(G, x, c_true, big);
    ASSERT_EQ(rs.snapshots[0].size(), 3u);
    ASSERT_EQ(rb.snapshots[0].size(), 6u);
    for (size_t r = 0; r < 3; ++r)
        EXPECT_EQ(rs.snapshots[0][r], rb.snapshots[0][r]) << "restart " << r;
    EXPECT_EQ(rs.loss, *std::min_element(rs.snapshots[0].begin(), rs.snapshots[0].end()));
}

TEST(Inversion, SnapshotEqualsShorterRunBitForBit) {
    // a T=120 run's step-30 snapshot must equal what a T=30 run reports:
    // this is what lets one long run stand in for every shorter setting
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 9, &c_true);
    InversionConfig long_run = toy_config(9);
    long_run.steps = 120;
    long_run.snapshot_steps = {30, 120};
    InversionConfig short_run = toy_config(9);
    short_run.steps = 30;
    short_run.snapshot_steps = {30};

    auto rl = ginv::invert(G, x, c_true, long_run);
    auto rs = ginv::invert(G, x, c_true, short_run);
    ASSERT_EQ(rl.snapshots.size(), 2u);
    for (size_t r = 0; r < rl.snapshots[0].size(); ++r)
        EXPECT_EQ(rl.snapshots[0][r], rs.snapshots[0][r]) << "restart " << r;
    EXPECT_EQ(rs.loss, *std::min_element(rs.snapshots[0].begin(), rs.snapshots[0].end()));
}

TEST(Inversion, TraceHoldsEveryStepAndDescends) {
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 11, &c_true);
    InversionConfig cfg = toy_config(11);
    cfg.steps = 40;
    cfg.restarts = 2;
    cfg.alpha = 0.02;
    cfg.record_trace = true;
    auto res = ginv::invert(G, x, c_true, cfg);
    ASSERT_EQ(res.trace.size(), 2u);
    for (size_t r = 0; r < 2; ++r) {
        ASSERT_EQ(res.trace[r].size(), 41u);
        Tensor<double> z0({1, 2});
        ginv::draw_restart_latent(z0.data(), 2, cfg.seed, cfg.image_index, c_true,
                                  static_cast<int>(r));
        EXPECT_NEAR(res.trace[r][0], ginv::inversion_loss(G, x, z0, c_true, cfg.beta), 1e-12);
        for (size_t t = 1; t < res.trace[r].size(); ++t)
            EXPECT_LE(res.trace[r][t], res.trace[r][t - 1] + 1e-9)
                << "restart " << r << " step " << t;
    }
}

TEST(Inversion, MatchesGridSearchOracle) {
    // desk-scale version of the oracle-equivalence gate: losses within 1e-2
    // of dense grid search and identical argmin class on every query
    ToyAffineGen<double> G;
    int loss_misses = 0, label_misses = 0;
    for (int64_t q = 0; q < 25; ++q) {
        int c_true;
        Tensor<double> x = make_query(G, q, &c_true);
        InversionConfig cfg = toy_config(q);
        double best_inv = 1e300, best_grid = 1e300;
        int argmin_inv = -1, argmin_grid = -1;
        for (int c = 0; c < 3; ++c) {
            const double li = ginv::invert(G, x, c, cfg).loss;
            const double lg = ginv::grid_min_loss(G, x.data(), c, cfg.beta).loss;
            if (std::fabs(li - lg) > 1e-2) ++loss_misses;
            if (li < best_inv) best_inv = li, argmin_inv = c;
            if (lg < best_grid) best_grid = lg, argmin_grid = c;
        }
        if (argmin_inv != argmin_grid) ++label_misses;
    }
    EXPECT_EQ(loss_misses, 0);
    EXPECT_EQ(label_misses, 0);
}

TEST(Inversion, AdamVariantAlsoReachesGridMinimum) {
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 14, &c_true);
    InversionConfig cfg = toy_config(14);
    cfg.use_adam = true;
    cfg.alpha = 0.05;
    cfg.steps = 800;
    const double li = ginv::invert(G, x, c_true, cfg).loss;
    const double lg = ginv::grid_min_loss(G, x.data(), c_true, cfg.beta).loss;
    EXPECT_NEAR(li, lg, 1e-2);
}

TEST(Inversion, ThrowsWhenEveryRestartDiverges) {
    ToyAffineGen<double> G;
    int c_true;
    Tensor<double> x = make_query(G, 2, &c_true);
    InversionConfig cfg = toy_config(2);
    cfg.alpha = 100.0;  // way past the stable step size
    cfg.steps = 500;
    cfg.restarts = 2;
    EXPECT_THROW(ginv::invert(G, x, c_true, cfg), ginv::contract_error);
}
