#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "evdetect/spot.hpp"

using namespace evdetect;

namespace {

std::vector<double> gpd_samples(double gamma, double sigma, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> y(n);
  for (double& x : y) {
    const double v = u(rng);
    x = std::abs(gamma) < 1e-12 ? -sigma * std::log1p(-v) : sigma / gamma * (std::pow(1.0 - v, -gamma) - 1.0);
  }
  return y;
}

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(GpdLikelihood, HandExamples) {
  const std::vector<double> y{1.0};
  EXPECT_NEAR(gpd_log_likelihood(0.0, 1.0, y), -1.0, 1e-12);
  EXPECT_NEAR(gpd_log_likelihood(1e-10, 1.0, y), -1.0, 1e-9);
  EXPECT_NEAR(gpd_log_likelihood(1.0, 1.0, y), -2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(gpd_log_likelihood(1.0, 1.0, y), -1.38629, 1e-5);
}

TEST(GpdLikelihood, DomainErrors) {
  const std::vector<double> y{1.0, 2.0};
  EXPECT_THROW(gpd_log_likelihood(-1.0, 1.0, y), DomainError);
  EXPECT_THROW(gpd_log_likelihood(0.1, 0.0, y), DomainError);
  EXPECT_THROW(gpd_log_likelihood(0.1, 1.0, std::vector<double>{-1.0}), DomainError);
}

TEST(Grimshaw, RecoversGpdParameters) {
  const auto y = gpd_samples(0.3, 2.0, 5000, 21);
  const GpdFit f = grimshaw_fit(y);
  EXPECT_NEAR(f.gamma, 0.3, 0.08);
  EXPECT_NEAR(f.sigma, 2.0, 0.2);
  EXPECT_EQ(f.n_excesses, 5000u);
}

TEST(Grimshaw, RecoversExponential) {
  const auto y = gpd_samples(0.0, 1.0, 5000, 22);
  const GpdFit f = grimshaw_fit(y);
  EXPECT_GE(f.gamma, -0.1);
  EXPECT_LE(f.gamma, 0.1);
  EXPECT_NEAR(f.sigma, 1.0, 0.1);
}

TEST(Grimshaw, RecoversNegativeShape) {
  const auto y = gpd_samples(-0.2, 1.0, 5000, 23);
  const GpdFit f = grimshaw_fit(y);
  EXPECT_NEAR(f.gamma, -0.2, 0.08);
  EXPECT_NEAR(f.sigma, 1.0, 0.1);
}

TEST(Grimshaw, AllEqualFallsBackToExponential) {
  const std::vector<double> y(50, 2.5);
  const GpdFit f = grimshaw_fit(y);
  EXPECT_EQ(f.gamma, 0.0);
  EXPECT_DOUBLE_EQ(f.sigma, 2.5);
}

TEST(Grimshaw, RejectsBadInput) {
  EXPECT_THROW(grimshaw_fit(std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(grimshaw_fit(std::vector<double>{1.0, 0.0}), std::invalid_argument);
}

TEST(Grimshaw, BeatsRandomFeasiblePoints) {
  const auto y = gpd_samples(0.2, 1.5, 800, 24);
  const GpdFit f = grimshaw_fit(y);
  const double best = gpd_log_likelihood(f.gamma, f.sigma, y);
  const double ymax = *std::max_element(y.begin(), y.end());
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> g(-0.5, 1.0), s(0.1, 5.0);
  int checked = 0;
  while (checked < 100) {
    const double gamma = g(rng), sigma = s(rng);
    if (1.0 + gamma / sigma * ymax <= 0.0) continue;
    EXPECT_GE(best, gpd_log_likelihood(gamma, sigma, y));
    ++checked;
  }
}

TEST(Grimshaw, LocallyOptimalOnGrid) {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    const auto y = gpd_samples(0.1 * static_cast<double>(seed - 31), 2.0, 2000, seed);
    const GpdFit f = grimshaw_fit(y);
    const double best = gpd_log_likelihood(f.gamma, f.sigma, y);
    for (int i = -5; i <= 5; ++i)
      for (int j = -5; j <= 5; ++j) {
        const double gamma = f.gamma * (1.0 + 0.02 * i) + (f.gamma == 0.0 ? 0.002 * i : 0.0);
        const double sigma = f.sigma * (1.0 + 0.02 * j);
        double ll;
        try {
          ll = gpd_log_likelihood(gamma, sigma, y);
        } catch (const DomainError&) {
          continue;
        }
        EXPECT_GE(best, ll - 1e-9 * std::abs(ll)) << "seed " << seed << " grid " << i << "," << j;
      }
  }
}

TEST(Quantile, HandExamples) {
  EXPECT_NEAR(gpd_quantile(10.0, GpdFit{0.5, 2.0, 200}, 0.001, 10000), 23.8885, 1e-3);
  EXPECT_NEAR(gpd_quantile(10.0, GpdFit{0.0, 2.0, 200}, 0.001, 10000), 15.9915, 1e-3);
  EXPECT_NEAR(gpd_quantile(10.0, GpdFit{1e-10, 2.0, 200}, 0.001, 10000), 15.9915, 1e-3);
  EXPECT_NEAR(gpd_quantile(10.0, GpdFit{0.5, 2.0, 200}, 0.02, 10000), 10.0, 1e-12);
}

TEST(Quantile, Monotonicity) {
  double prev = 1e300;
  for (double q = 1e-5; q < 0.02; q *= 1.5) {
    const double z = gpd_quantile(1.0, GpdFit{0.2, 1.0, 200}, q, 10000);
    EXPECT_LT(z, prev);
    prev = z;
  }
  prev = -1e300;
  for (double sigma = 0.1; sigma < 10.0; sigma *= 1.3) {
    const double z = gpd_quantile(1.0, GpdFit{-0.1, sigma, 200}, 1e-3, 10000);
    EXPECT_GT(z, prev);
    prev = z;
  }
}

TEST(Quantile, RangeErrors) {
  EXPECT_THROW(gpd_quantile(1.0, GpdFit{0.1, 1.0, 200}, 0.05, 10000), std::invalid_argument);
  EXPECT_THROW(gpd_quantile(1.0, GpdFit{0.1, 1.0, 200}, 0.0, 10000), std::invalid_argument);
  EXPECT_THROW(gpd_quantile(1.0, GpdFit{0.1, 1.0, 200}, 1e-3, 100), std::invalid_argument);
}

TEST(Calibrate, PeakCountFromInitLevel) {
  const SpotState s = pot_calibrate(normals(5000, 41));
  EXPECT_EQ(s.peaks.size(), 100u);
  EXPECT_EQ(s.n_peaks_total, 100u);
  EXPECT_EQ(s.k, 5000u);
  EXPECT_GT(s.z_q, s.h);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(Calibrate, NormalScoresThresholdBehaves) {
  SpotConfig cfg;
  cfg.q = 1e-3;
  const SpotState s = pot_calibrate(normals(1000, 42), cfg);
  EXPECT_GT(s.h, 0.0);
  EXPECT_GT(s.z_q, s.h);
  const auto next = normals(1000, 43);
  const auto over = std::count_if(next.begin(), next.end(), [&](double x) { return x > s.z_q; });
  EXPECT_LE(over, 2);
}

TEST(Calibrate, ConstantScoresAreDegenerate) {
  const SpotState s = pot_calibrate(std::vector<double>(500, 0.25));
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.h, 0.25);
  EXPECT_GT(s.z_q, s.h);
  EXPECT_LT(s.z_q - s.h, 1e-6);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(Calibrate, LowersThresholdToGetTenPeaks) {
  const SpotState s = pot_calibrate(normals(100, 44));
  EXPECT_EQ(s.peaks.size(), 10u);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(Calibrate, RejectsShortOrInvalidInput) {
  EXPECT_THROW(pot_calibrate(normals(99, 45)), std::invalid_argument);
  auto v = normals(200, 46);
  v[3] = std::nan("");
  EXPECT_THROW(pot_calibrate(v), std::invalid_argument);
  SpotConfig bad;
  bad.q = 1.5;
  EXPECT_THROW(pot_calibrate(normals(200, 47), bad), std::invalid_argument);
}

TEST(SpotStep, BoundaryIsPeak) {
  SpotState s = pot_calibrate(normals(2000, 51));
  const double z = s.z_q;
  EXPECT_EQ(spot_step(s, z), SpotClass::peak);
  const double z2 = s.z_q;
  EXPECT_EQ(spot_step(s, std::nextafter(z2, 1e300)), SpotClass::anomaly);
}

TEST(SpotStep, NormalOnlyIncrementsK) {
  SpotState s = pot_calibrate(normals(2000, 52));
  SpotState before = s;
  EXPECT_EQ(spot_step(s, s.h), SpotClass::normal);
  EXPECT_EQ(s.k, before.k + 1);
  before.k = s.k;
  EXPECT_EQ(s, before);
}

TEST(SpotStep, AnomalyLeavesStateUntouched) {
  SpotState s = pot_calibrate(normals(2000, 53));
  const SpotState before = s;
  EXPECT_EQ(spot_step(s, s.z_q * 10.0 + 1.0), SpotClass::anomaly);
  EXPECT_EQ(s, before);
}

TEST(SpotStep, PeakRefitsAndKeepsThresholdAboveH) {
  SpotState s = pot_calibrate(normals(2000, 54));
  const auto stream = normals(5000, 55);
  for (double x : stream) {
    const std::size_t peaks = s.n_peaks_total;
    const SpotClass c = spot_step(s, x);
    EXPECT_EQ(s.n_peaks_total, c == SpotClass::peak ? peaks + 1 : peaks);
    EXPECT_GT(s.z_q, s.h);
  }
}

TEST(SpotStep, ReplayWithoutAnomaliesGivesSameTrajectory) {
  auto scores = normals(4000, 56);
  for (std::size_t i = 200; i < scores.size(); i += 250) scores[i] = 40.0;
  const auto calib = normals(1000, 57);
  SpotState a = pot_calibrate(calib);
  std::vector<double> kept, trace_a;
  for (double x : scores)
    if (spot_step(a, x) != SpotClass::anomaly) {
      kept.push_back(x);
      trace_a.push_back(a.z_q);
    }
  EXPECT_LT(kept.size(), scores.size());
  SpotState b = pot_calibrate(calib);
  std::vector<double> trace_b;
  for (double x : kept) {
    EXPECT_NE(spot_step(b, x), SpotClass::anomaly);
    trace_b.push_back(b.z_q);
  }
  EXPECT_EQ(trace_a, trace_b);
  EXPECT_EQ(a, b);
}

TEST(SpotStep, DetectsInjectedSpikes) {
  const auto calib = normals(2000, 58);
  auto stream = normals(10000, 59);
  std::vector<double> sorted = normals(200000, 60);
  std::sort(sorted.begin(), sorted.end());
  const double q999 = sorted[static_cast<std::size_t>(0.999 * static_cast<double>(sorted.size()))];
  std::vector<bool> spike(stream.size(), false);
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t at = 250 + i * 487;
    stream[at] = 10.0 * q999;
    spike[at] = true;
  }
  SpotState s = pot_calibrate(calib);
  int caught = 0, false_alarms = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const bool anomaly = spot_step(s, stream[i]) == SpotClass::anomaly;
    if (spike[i]) caught += anomaly;
    else false_alarms += anomaly;
  }
  EXPECT_GE(caught, 19);
  EXPECT_LE(false_alarms, static_cast<int>(0.005 * 9980));
}

TEST(SpotStep, DegenerateStateRecoversWhenPeaksArrive) {
  SpotState s = pot_calibrate(std::vector<double>(200, 1.0));
  ASSERT_TRUE(s.degenerate);
  EXPECT_EQ(spot_step(s, 1.0 + 1e-12), SpotClass::peak);
  EXPECT_EQ(spot_step(s, 1.0 + 0.5e-9), SpotClass::peak);
  EXPECT_FALSE(s.degenerate);
  EXPECT_GT(s.z_q, s.h);
}

TEST(SpotStep, PeaksCapKeepsNewest) {
  SpotConfig cfg;
  cfg.peaks_cap = 50;
  SpotState s = pot_calibrate(normals(5000, 61), cfg);
  EXPECT_EQ(s.peaks.size(), 50u);
  EXPECT_EQ(s.n_peaks_total, 100u);
}
