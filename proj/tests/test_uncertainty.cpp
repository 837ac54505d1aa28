#include "attclf/uncertainty.hpp"

#include <random>

#include "gtest/gtest.h"
#include "oracles.hpp"

namespace attclf {
namespace {

using testing::grid_integral;

StateDistribution estimate(double d, double mu, double kappa, double var_d, double var_mu, double var_k) {
  StateDistribution e;
  e.mean = {d, mu, kappa};
  e.logvar = {std::log(var_d), std::log(var_mu), std::log(var_k)};
  return e;
}

TEST(SampleStates, ZeroVarianceGivesCopiesOfTheMean) {
  StateDistribution e;
  e.mean = {0.3, -0.1, 0.02};
  std::mt19937_64 rng(1);
  const auto s = sample_states(e, {5.0, 0.0, 0.0, 8.0, 0.1}, 10, rng);
  ASSERT_EQ(s.size(), 10u);
  for (const auto& x : s) {
    EXPECT_EQ(x.state, (VehicleState{5.0, 0.3, -0.1, 8.0, 0.1}));
    EXPECT_EQ(x.kappa, 0.02);
  }
}

TEST(SampleStates, FirstSampleIsTheMean) {
  const StateDistribution e = estimate(0.4, 0.05, 0.01, 0.5, 0.1, 0.01);
  std::mt19937_64 rng(2);
  const auto s = sample_states(e, {0.0, 0.0, 0.0, 8.0, 0.0}, 1, rng);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].state.d, 0.4);
  EXPECT_EQ(s[0].state.mu, 0.05);
  EXPECT_EQ(s[0].kappa, 0.01);
}

TEST(SampleStates, VarianceOfDraws) {
  const StateDistribution e = estimate(0.0, 0.0, 0.0, 0.04, 1e-6, 1e-6);
  std::mt19937_64 rng(3);
  const int n = 10000;
  const auto s = sample_states(e, {}, n, rng);
  double sum = 0.0, sq = 0.0;
  for (const auto& x : s) {
    sum += x.state.d;
    sq += x.state.d * x.state.d;
  }
  const double mean = sum / n;
  const double var = (sq - n * mean * mean) / (n - 1);
  EXPECT_NEAR(var, 0.04, 0.05 * 0.04);
}

TEST(SampleStates, DeterministicPerSeed) {
  const StateDistribution e = estimate(0.1, 0.0, 0.01, 0.1, 0.01, 1e-4);
  std::mt19937_64 a(7), b(7);
  const auto x = sample_states(e, {}, 20, a), y = sample_states(e, {}, 20, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].state, y[i].state);
}

TEST(Propagate, IdenticalSamplesGiveIdenticalControls) {
  const std::vector<StateSample> samples(10, StateSample{{0.0, 0.5, 0.1, 8.0, 0.0}, 0.02});
  const auto r = propagate({}, {}, {}, samples);
  ASSERT_EQ(r.controls.size(), 10u);
  for (const auto& u : r.controls) EXPECT_EQ(u, r.controls[0]);
}

TEST(Propagate, MatchesSequentialSolves) {
  const StateDistribution e = estimate(0.3, 0.05, 0.02, 0.05, 0.01, 1e-4);
  std::mt19937_64 rng(4);
  const auto samples = sample_states(e, {0.0, 0.0, 0.0, 8.0, 0.05}, 30, rng);
  const AttentionParams att{0.7, 1.5, 2.0};
  const ClfConfig clf;
  const VehicleParams p;
  const auto r = propagate(att, clf, p, samples);
  ASSERT_EQ(r.controls.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(r.controls[i], att_clf_control(att, clf, p, samples[i].kappa, samples[i].state).control);
  }
}

TEST(Propagate, DropsSingularSamples) {
  std::vector<StateSample> samples{{{0.0, 0.5, 0.0, 8.0, 0.0}, 0.02}, {{0.0, 2.5, 0.0, 8.0, 0.0}, 0.4}};
  const auto r = propagate({}, {}, {}, samples);
  EXPECT_EQ(r.controls.size(), 1u);
  EXPECT_EQ(r.dropped, 1);
  samples.erase(samples.begin());
  EXPECT_THROW(propagate({}, {}, {}, samples), std::runtime_error);
}

TEST(Kde, SingleSampleIsAFloorBump) {
  const ControlDistribution d = kde({{0.4, -0.1}});
  EXPECT_EQ(d.bandwidth(0), 1e-4);
  EXPECT_EQ(d.bandwidth(1), 1e-4);
  const VehicleParams p;
  EXPECT_EQ(select_control(d, uniform_prior, default_probes(d, p, 21)), (ControlInput{0.4, -0.1}));
}

TEST(Kde, ScottBandwidth) {
  const std::vector<ControlInput> s{{0.0, 0.0}, {1.0, 0.2}, {2.0, 0.4}, {3.0, 0.6}};
  const ControlDistribution d = kde(s);
  const double sigma_a = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(d.bandwidth(0), sigma_a * std::pow(4.0, -1.0 / 6.0), 1e-12);
  EXPECT_NEAR(d.bandwidth(1), 0.2 * sigma_a * std::pow(4.0, -1.0 / 6.0), 1e-12);
}

TEST(Kde, IntegratesToOne) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<ControlInput> s;
  for (int i = 0; i < 20; ++i) s.push_back({0.5 + n01(rng), 0.1 * n01(rng)});
  EXPECT_NEAR(grid_integral(kde(s)), 1.0, 1e-2);
  EXPECT_NEAR(grid_integral(kde({{0.2, 0.1}})), 1.0, 1e-2);
}

std::vector<ControlInput> two_clusters() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01;
  std::vector<ControlInput> s;
  for (int i = 0; i < 15; ++i) s.push_back({1.0 + 0.05 * n01(rng), 0.2 + 0.01 * n01(rng)});
  for (int i = 0; i < 5; ++i) s.push_back({-1.0 + 0.05 * n01(rng), -0.2 + 0.01 * n01(rng)});
  return s;
}

TEST(Kde, LargerClusterHasHigherDensity) {
  const ControlDistribution d = kde(two_clusters());
  EXPECT_GT(d.density({1.0, 0.2}), d.density({-1.0, -0.2}));
}

TEST(SelectControl, PicksTheLargerCluster) {
  const ControlDistribution d = kde(two_clusters());
  const VehicleParams p;
  const ControlInput u = select_control(d, uniform_prior, default_probes(d, p, 21));
  EXPECT_GT(u.accel, 0.5);
  EXPECT_GT(u.steer_rate, 0.1);
}

TEST(SelectControl, PriorSupportIsRespected) {
  const ControlDistribution d = kde(two_clusters());
  const VehicleParams p;
  auto left_only = [](const ControlInput& u) { return u.steer_rate <= 0.0 ? 1.0 : 0.0; };
  const ControlInput u = select_control(d, left_only, default_probes(d, p, 21));
  EXPECT_LE(u.steer_rate, 0.0);
}

TEST(SelectControl, InvariantToDuplicatedProbes) {
  const ControlDistribution d = kde(two_clusters());
  const VehicleParams p;
  auto probes = default_probes(d, p, 21);
  const ControlInput a = select_control(d, uniform_prior, probes);
  probes.insert(probes.end(), probes.begin(), probes.end());
  EXPECT_EQ(select_control(d, uniform_prior, probes), a);
}

TEST(SelectControl, EqualSamplesIgnorePriorSupport) {
  const ControlDistribution d = kde(std::vector<ControlInput>(5, ControlInput{0.3, 0.3}));
  const VehicleParams p;
  auto nowhere = [](const ControlInput&) { return 0.0; };
  EXPECT_EQ(select_control(d, nowhere, default_probes(d, p, 21)), (ControlInput{0.3, 0.3}));
}

TEST(SelectControl, TiesPreferSmallerNorm) {
  ControlDistribution d;
  d.samples = {{1.0, 0.0}, {-1.0, 0.0}};
  d.bandwidth = {0.1, 0.1};
  const std::vector<ControlInput> probes{{1.0, 0.0}, {-1.0, 0.0}, {0.5, 0.0}};
  auto flat = [](const ControlInput&) { return 1.0; };
  // Symmetric density: the two sample probes tie, the lexicographic rule picks (-1, 0).
  EXPECT_EQ(select_control(d, flat, probes), (ControlInput{-1.0, 0.0}));
}

}  // namespace
}  // namespace attclf
