#include "test_util.hpp"

#include <altflow/diagnostics.hpp>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

using namespace altflow;
using altflow::testing::random_tensor;

namespace {

/// sup |F_n - Phi| over a uniform grid, with F_n counted directly at each grid point.
double grid_ks(std::vector<double> xs, double lo, double hi, std::size_t points) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i <= points; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points);
        while (k < xs.size() && xs[k] <= x) ++k;
        d = std::max(d, std::abs(static_cast<double>(k) / n - normal_cdf(x)));
    }
    return d;
}

} // namespace

TEST(NormalCdf, MatchesBoost) {
    const boost::math::normal_distribution<double> nd;
    for (double x = -8.0; x <= 8.0; x += 0.37) EXPECT_NEAR(normal_cdf(x), boost::math::cdf(nd, x), 1e-15);
}

TEST(Ks, SingleSampleClosedForm) {
    const std::vector<double> one{0.0};
    EXPECT_DOUBLE_EQ(ks_statistic(one), 0.5);
    const std::vector<double> two{-1.0, 1.0};
    // Jumps at +-1: max(|0.5 - Phi(-1)|, |Phi(-1)|, ...) = 0.5 - Phi(-1) vs Phi(-1).
    EXPECT_NEAR(ks_statistic(two), std::max(normal_cdf(-1.0), 0.5 - normal_cdf(-1.0)), 1e-15);
}

TEST(Ks, MatchesDenseGridWithinResolution) {
    Rng rng(5);
    const double lo = -9.0, hi = 9.0;
    const std::size_t points = 1'800'000;
    const double step = (hi - lo) / static_cast<double>(points);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 5 + rng.below(150);
        std::vector<double> xs(n);
        const double shift = rng.uniform() - 0.5;
        for (auto& x : xs) x = shift + rng.normal();
        const double exact = ks_statistic(xs);
        const double grid = grid_ks(xs, lo, hi, points);
        // The grid can only undershoot, by at most the CDF change over one step
        // plus the jump mass of samples sharing a grid cell.
        std::sort(xs.begin(), xs.end());
        std::size_t crowd = 1;
        for (std::size_t i = 0, j = 0; i < n; ++i) {
            while (xs[i] - xs[j] > step) ++j;
            crowd = std::max(crowd, i - j + 1);
        }
        const double tol = step * 0.3989422804014327 + static_cast<double>(crowd - 1) / static_cast<double>(n) + 1e-12;
        EXPECT_LE(grid, exact + 1e-12);
        EXPECT_LE(exact - grid, tol) << "trial " << t;
    }
}

TEST(Ks, CustomCdfAndErrors) {
    const std::vector<double> xs{0.1, 0.4, 0.7};
    // Against Uniform(0, 1): jumps give |1/3 - 0.1|, |2/3 - 0.4|, |1 - 0.7|, and left limits.
    const double d = ks_statistic(xs, [](double x) { return std::clamp(x, 0.0, 1.0); });
    EXPECT_NEAR(d, 0.3, 1e-15);
    EXPECT_THROW(ks_statistic(std::vector<double>{}), Error);
    EXPECT_THROW(ks_statistic(std::vector<double>{0.0, std::nan("")}), Error);
}

TEST(KsReport, StandardizationRemovesMeanShift) {
    Tensor4 z = random_tensor({400, 3, 2, 2}, 7, 0.5, 2.0);
    const KsReport raw = channel_ks_report(z);
    ASSERT_EQ(raw.per_channel_ks.size(), 3u);
    EXPECT_EQ(raw.n_samples, 1600u);
    for (double k : raw.per_channel_ks) EXPECT_GT(k, 0.8);

    Tensor4 mu(Shape4{1, 3, 2, 2}, 2.0), ls(Shape4{1, 3, 2, 2}, std::log(0.5));
    const KsReport std_r = channel_ks_report(z, BaseDistribution(mu, ls));
    for (double k : std_r.per_channel_ks) EXPECT_LT(k, ks_critical_value_5pct(1600) * 1.5);
}

TEST(KsReport, SummaryAndPooling) {
    KsReport a, b;
    a.per_channel_ks = {0.1, 0.3};
    a.n_samples = 10;
    b.per_channel_ks = {0.2, 0.4};
    b.n_samples = 10;
    const std::vector<KsReport> reps{a, b};
    const KsReport p = pool_ks_reports(reps);
    EXPECT_EQ(p.measurements, 2u);
    EXPECT_NEAR(p.mean, 0.25, 1e-15);
    const double sd = std::sqrt((0.0225 + 0.0025 + 0.0025 + 0.0225) / 3.0);
    EXPECT_NEAR(p.ci95_halfwidth, 1.96 * sd / 2.0, 1e-12);
    EXPECT_THROW(pool_ks_reports(std::vector<KsReport>{}), Error);
    EXPECT_THROW(channel_ks_report(Tensor4(Shape4{1, 2, 1, 1})), Error);
}

TEST(MeanSquare, Basic) {
    Tensor4 z(Shape4{1, 2, 1, 1});
    z[0] = 1.0;
    z[1] = 3.0;
    EXPECT_EQ(mean_square_statistic(z), 5.0);
    EXPECT_THROW(mean_square_statistic(Tensor4{}), Error);
}

TEST(KlIdentity, EstimatorsAgreeOnSharedSamples) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const FlowModel m = FlowModel::random(2, 2, 4, seed, 0.4);
        const BaseDistribution base(random_tensor({1, 2, 1, 1}, seed + 10, 0.5), random_tensor({1, 2, 1, 1}, seed + 20, 0.2));
        Rng rng(seed);
        const KlEstimate k = kl_identity_check(m, base, gaussian_sampler({1, 2, 1, 1}, 1.0, 0.7), 10000, rng);
        EXPECT_NEAR(k.kl_x, k.kl_z, 1e-10);
        EXPECT_GT(k.kl_x, 0.0);
    }
}

TEST(KlIdentity, ClosedFormGaussianMeanShift) {
    Rng rng(25);
    const KlEstimate k = kl_identity_check(FlowModel(1, 0, 1), BaseDistribution(1, 1, 1),
                                           gaussian_sampler({1, 1, 1, 1}, 2.0, 1.0), 100000, rng);
    EXPECT_NEAR(k.kl_x, 2.0, 3.0 * k.stderr_x);
    EXPECT_NEAR(k.kl_z, 2.0, 3.0 * k.stderr_z);
}

TEST(KlIdentity, Preconditions) {
    Rng rng(1);
    DataSampler no_density = gaussian_sampler({1, 1, 1, 1}, 0.0, 1.0);
    no_density.log_density = nullptr;
    try {
        kl_identity_check(FlowModel(1, 0, 1), BaseDistribution(1, 1, 1), no_density, 10000, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RequiresKnownDensity);
    }
    EXPECT_THROW(kl_identity_check(FlowModel(1, 0, 1), BaseDistribution(1, 1, 1),
                                   gaussian_sampler({1, 1, 1, 1}, 0.0, 1.0), 9999, rng),
                 Error);
}
