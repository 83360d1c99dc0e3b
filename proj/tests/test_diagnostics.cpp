#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "drm/diagnostics.hpp"
#include "drm/rng.hpp"

using namespace drm;
using namespace drm::diagnostics;

namespace {

std::vector<double> normal_draws(std::size_t n, double mean, double sd, std::uint64_t seed) {
  Philox4x32 rng(seed, 0);
  std::normal_distribution<double> dist(mean, sd);
  std::vector<double> out(n);
  for (auto& x : out) x = dist(rng);
  return out;
}

mcmc::Trace trace_of(const std::vector<std::vector<double>>& chains) {
  mcmc::Trace t;
  t.names = {"x"};
  t.chains = chains.size();
  t.draws = chains[0].size();
  for (const auto& c : chains) t.samples.insert(t.samples.end(), c.begin(), c.end());
  t.divergent.assign(t.chains * t.draws, 0);
  t.accept_stat.assign(t.chains * t.draws, 1.0);
  t.tree_depth.assign(t.chains * t.draws, 1);
  t.step_sizes.assign(t.chains, 0.5);
  return t;
}

double trapezoid(const KdeCurve& c) {
  double s = 0;
  for (std::size_t i = 1; i < c.grid.size(); ++i)
    s += 0.5 * (c.density[i] + c.density[i - 1]) * (c.grid[i] - c.grid[i - 1]);
  return s;
}

}  // namespace

TEST_CASE("r-hat") {
  std::vector<std::vector<double>> iid;
  for (std::uint64_t c = 0; c < 4; ++c) iid.push_back(normal_draws(1000, 0, 1, c));
  CHECK(r_hat(iid) < 1.01);
  CHECK(r_hat(trace_of(iid), 0) == r_hat(iid));
  const std::vector<std::vector<double>> apart{normal_draws(1000, 0, 1, 1),
                                               normal_draws(1000, 10, 1, 2)};
  // Between/within closed form over the four half-chains (means 0, 0, 10, 10,
  // unit variance): sqrt(1 + 100 / 3).
  CHECK(split_r_hat(apart) > 2.0);
  CHECK(split_r_hat(apart) == doctest::Approx(std::sqrt(1.0 + 100.0 / 3.0)).epsilon(0.05));
  // Rank normalization bounds the statistic, but it must still flag the split.
  CHECK(r_hat(apart) > 1.5);
  CHECK(split_r_hat(iid) < 1.01);
  CHECK(r_hat({std::vector<double>(100, 3.0), std::vector<double>(100, 3.0)}) == 1.0);
  CHECK_THROWS_AS(r_hat({normal_draws(100, 0, 1, 1)}), std::invalid_argument);
  CHECK_THROWS_AS(r_hat({{1, 2, 3}, {1, 2, 3}}), std::invalid_argument);

  // Split-R-hat catches drift within a chain.
  std::vector<double> drift(1000);
  for (std::size_t i = 0; i < drift.size(); ++i) drift[i] = i < 500 ? 0.0 : 5.0;
  const auto noise = normal_draws(1000, 0, 1, 9);
  for (std::size_t i = 0; i < drift.size(); ++i) drift[i] += noise[i];
  CHECK(r_hat({drift, drift}) > 1.5);
}

TEST_CASE("effective sample size") {
  std::vector<std::vector<double>> iid;
  for (std::uint64_t c = 0; c < 4; ++c) iid.push_back(normal_draws(2500, 0, 1, 20 + c));
  CHECK(ess_bulk(iid) == doctest::Approx(10000).epsilon(0.2));
  CHECK(ess_basic(iid) == doctest::Approx(10000).epsilon(0.2));
  CHECK(ess_bulk({normal_draws(10000, 0, 1, 30)}) == doctest::Approx(10000).epsilon(0.2));

  // AR(1) with phi = 0.9 has ESS about n (1 - phi) / (1 + phi).
  auto e = normal_draws(20000, 0, 1, 31);
  std::vector<double> ar(e.size());
  ar[0] = e[0];
  for (std::size_t i = 1; i < ar.size(); ++i) ar[i] = 0.9 * ar[i - 1] + e[i];
  CHECK(ess_basic({ar}) == doctest::Approx(20000 * 0.1 / 1.9).epsilon(0.3));
  CHECK(ess_bulk({ar}) < 20000 * 0.2);
}

TEST_CASE("hpd interval") {
  std::vector<double> grid(1001);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = i / 1000.0;
  auto iv = hpd_interval(grid, 0.9);
  CHECK(std::abs(iv.width() - 0.9) <= 1e-3 + 1e-12);

  iv = hpd_interval(std::vector<double>(50, 0.25), 0.9);
  CHECK(iv.low == 0.25);
  CHECK(iv.high == 0.25);

  const auto normal = normal_draws(20001, 2.0, 1.0, 40);
  iv = hpd_interval(normal, 0.9);
  CHECK(std::abs(0.5 * (iv.low + iv.high) - 2.0) < 0.05);
  CHECK(iv.width() == doctest::Approx(2 * 1.6449).epsilon(0.03));

  const auto wide = normal_draws(5000, 0.0, 2.0, 41);
  const auto narrow = normal_draws(5000, 0.0, 1.0, 42);
  CHECK(hpd_interval(wide, 0.9).width() > hpd_interval(narrow, 0.9).width());

  const auto [lo, hi] = std::minmax_element(normal.begin(), normal.end());
  iv = hpd_interval(normal, 1.0 - 1e-12);
  CHECK(iv.low == *lo);
  CHECK(iv.high == *hi);

  // Skewed: the interval hugs the mode rather than the median.
  std::vector<double> expo(10000);
  Philox4x32 rng(43, 0);
  for (auto& x : expo) x = -std::log(rng.uniform());
  iv = hpd_interval(expo, 0.9);
  CHECK(iv.low < 0.01);
  CHECK(iv.high == doctest::Approx(std::log(10.0)).epsilon(0.05));
}

TEST_CASE("kernel density estimate") {
  const auto draws = normal_draws(10000, 0.0, 1.0, 50);
  const auto curve = kde(draws, 512);
  REQUIRE_FALSE(curve.degenerate);
  CHECK(curve.grid.size() == 512);
  const auto peak = std::max_element(curve.density.begin(), curve.density.end());
  CHECK(std::abs(curve.grid[static_cast<std::size_t>(peak - curve.density.begin())]) < 0.1);
  CHECK(std::abs(trapezoid(curve) - 1.0) < 1e-3);
  const auto [lo, hi] = std::minmax_element(draws.begin(), draws.end());
  CHECK(curve.grid.front() == doctest::Approx(*lo - 3 * curve.bandwidth));
  CHECK(curve.grid.back() == doctest::Approx(*hi + 3 * curve.bandwidth));

  auto mix = normal_draws(5000, -3.0, 1.0, 51);
  const auto right = normal_draws(5000, 3.0, 1.0, 52);
  mix.insert(mix.end(), right.begin(), right.end());
  const auto bimodal = kde(mix, 256);
  CHECK(local_maxima(bimodal.density).size() == 2);
  CHECK(std::abs(trapezoid(bimodal) - 1.0) < 1e-3);

  const auto flat = kde(std::vector<double>(20, 0.4), 256);
  CHECK(flat.degenerate);
  CHECK(flat.density.empty());

  const auto bounded = kde(draws, 64, -1.0, 1.0);
  CHECK(bounded.grid.front() == -1.0);
  CHECK(bounded.grid.back() == 1.0);
}

TEST_CASE("silverman bandwidth and z quantile") {
  const auto draws = normal_draws(10000, 0.0, 1.0, 60);
  CHECK(silverman_bandwidth(draws) == doctest::Approx(0.9 * std::pow(10000.0, -0.2)).epsilon(0.05));
  std::vector<double> tied(100, 1.0);
  tied[0] = 0.0;
  tied[99] = 2.0;
  CHECK(silverman_bandwidth(tied) > 0.0);
  CHECK(two_sided_z(0.95) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(two_sided_z(0.90) == doctest::Approx(1.644854).epsilon(1e-6));
}

TEST_CASE("summary") {
  std::vector<std::vector<double>> iid;
  for (std::uint64_t c = 0; c < 4; ++c) iid.push_back(normal_draws(500, 1.0, 2.0, 70 + c));
  auto t = trace_of(iid);
  t.divergent[3] = 1;
  const auto s = summarize(t, 1.5);
  REQUIRE(s.parameters.size() == 1);
  const auto& p = s.parameters[0];
  CHECK(p.name == "x");
  CHECK(p.r_hat.has_value());
  CHECK(*p.r_hat >= 1.0 - 1e-3);
  CHECK(p.ess_bulk <= 4 * 500 * 1.0001);
  CHECK(p.mean == doctest::Approx(1.0).epsilon(0.1));
  CHECK(p.sd == doctest::Approx(2.0).epsilon(0.1));
  CHECK(p.hpd5 < p.mean);
  CHECK(p.mean < p.hpd95);
  CHECK(s.divergences == 1);
  CHECK(s.runtime_seconds == 1.5);
  CHECK(s.max_r_hat() == *p.r_hat);
  CHECK(s.min_ess() == p.ess_bulk);

  const auto single = summarize(trace_of({iid[0]}));
  CHECK_FALSE(single.parameters[0].r_hat.has_value());
}
