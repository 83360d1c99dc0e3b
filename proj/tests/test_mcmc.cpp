#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "drm/common.hpp"
#include "drm/mcmc/nuts.hpp"
#include "drm/mcmc/sampler.hpp"
#include "drm/mcmc/target.hpp"

using namespace drm;
using namespace drm::mcmc;

namespace {

// Zero-mean Gaussian with covariance diag(sd^2) rotated by correlation rho (2-D).
class Gaussian final : public LogDensityTarget {
public:
  explicit Gaussian(std::size_t dim, double rho = 0.0, double sd = 1.0) : dim_(dim), sd_(sd) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                    static_cast<Eigen::Index>(dim));
    if (dim == 2) cov(0, 1) = cov(1, 0) = rho;
    precision_ = (cov * sd * sd).inverse();
  }
  std::size_t dimension() const override { return dim_; }
  double log_density(const Vector& x, Vector& grad) const override {
    grad = -precision_ * x;
    return 0.5 * x.dot(grad);
  }

private:
  std::size_t dim_;
  double sd_;
  Eigen::MatrixXd precision_;
};

// Standard normal that is only finite on |x| < radius.
class Truncated final : public LogDensityTarget {
public:
  explicit Truncated(double radius) : radius_(radius) {}
  std::size_t dimension() const override { return 1; }
  double log_density(const Vector& x, Vector& grad) const override {
    grad = -x;
    if (std::abs(x[0]) >= radius_) return std::numeric_limits<double>::quiet_NaN();
    return -0.5 * x[0] * x[0];
  }
  std::optional<Vector> initial_point() const override { return Vector::Zero(1); }

private:
  double radius_;
};

class Flat final : public LogDensityTarget {
public:
  std::size_t dimension() const override { return 2; }
  double log_density(const Vector& x, Vector& grad) const override {
    grad = Vector::Zero(x.size());
    return 0.0;
  }
};

// Unnormalized densities over constrained coordinates.
class GammaShape2 final : public ConstrainedModel {
public:
  std::size_t dimension() const override { return 1; }
  double log_density(const Vector& x, Vector& g) const override {
    g.resize(1);
    g[0] = 1.0 / x[0] - 1.0;
    return std::log(x[0]) - x[0];
  }
};

class BetaOnInterval final : public ConstrainedModel {  // Beta(2, 3) stretched to (1, 3)
public:
  std::size_t dimension() const override { return 1; }
  double log_density(const Vector& x, Vector& g) const override {
    const double u = (x[0] - 1.0) / 2.0;
    g.resize(1);
    g[0] = (1.0 / u - 2.0 / (1.0 - u)) / 2.0;
    return std::log(u) + 2.0 * std::log(1.0 - u);
  }
};

class DirichletModel final : public ConstrainedModel {
public:
  explicit DirichletModel(Vector alpha) : alpha_(std::move(alpha)) {}
  std::size_t dimension() const override { return static_cast<std::size_t>(alpha_.size()); }
  double log_density(const Vector& x, Vector& g) const override {
    g = (alpha_.array() - 1.0) / x.array();
    return ((alpha_.array() - 1.0) * x.array().log()).sum();
  }

private:
  Vector alpha_;
};

double trapezoid(const std::function<double(double)>& f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double s = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) s += f(lo + i * h);
  return s * h;
}

SamplerConfig small_config(std::size_t draws, std::size_t tune, std::size_t chains,
                           std::uint64_t seed) {
  SamplerConfig c;
  c.draws = draws;
  c.tune = tune;
  c.chains = chains;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("leapfrog examples") {
  const Gaussian normal(1);
  const Metric identity(1);
  PhasePoint z;
  z.q = Vector::Zero(1);
  REQUIRE(refresh(z, normal));
  z.p = Vector::Constant(1, 1.0);
  REQUIRE(leapfrog(z, 0.1, normal, identity));
  // p: 1 -> 1 - 0.05 * 0 = 1; q: 0.1; p: 1 - 0.05 * 0.1 = 0.995.
  CHECK(z.q[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(z.p[0] == doctest::Approx(0.995).epsilon(1e-15));

  const Flat flat;
  PhasePoint f;
  f.q = Vector::Zero(2);
  REQUIRE(refresh(f, flat));
  f.p = Vector(2);
  f.p << 0.3, -2.0;
  REQUIRE(leapfrog(f, 0.25, flat, Metric(2)));
  CHECK(f.q[0] == doctest::Approx(0.075));
  CHECK(f.q[1] == doctest::Approx(-0.5));
  CHECK(f.p[0] == 0.3);
  CHECK(f.p[1] == -2.0);

  const Gaussian corr(2, 0.8, 1.5);
  PhasePoint a;
  a.q = Vector(2);
  a.q << 0.7, -1.1;
  REQUIRE(refresh(a, corr));
  a.p = Vector(2);
  a.p << -0.4, 0.9;
  const PhasePoint start = a;
  for (int i = 0; i < 20; ++i) REQUIRE(leapfrog(a, 0.05, corr, Metric(2)));
  a.p = -a.p;
  for (int i = 0; i < 20; ++i) REQUIRE(leapfrog(a, 0.05, corr, Metric(2)));
  CHECK((a.q - start.q).norm() < 1e-12);
  CHECK((a.p + start.p).norm() < 1e-12);

  const Truncated trunc(0.5);
  PhasePoint t;
  t.q = Vector::Zero(1);
  REQUIRE(refresh(t, trunc));
  t.p = Vector::Constant(1, 10.0);
  CHECK_FALSE(leapfrog(t, 0.1, trunc, Metric(1)));
}

TEST_CASE("nuts stays put on a sharp mode with a tiny step") {
  const Gaussian sharp(1, 0.0, 1e-3);
  PhasePoint z;
  z.q = Vector::Constant(1, 1e-4);
  REQUIRE(refresh(z, sharp));
  Philox4x32 rng(1, 0);
  const double before = z.q[0];
  nuts_draw(z, sharp, 1e-9, Metric(1), rng, {3});
  // At most 2^3 - 1 leapfrog steps of length 1e-9 * |p|.
  CHECK(std::abs(z.q[0] - before) < 1e-7);
}

TEST_CASE("nuts recovers normal moments") {
  const Trace t = run_chains(Gaussian(1), small_config(2500, 500, 4, 3));
  const auto x = t.pooled_draws(0);
  REQUIRE(x.size() == 10000);
  double m = 0, v = 0;
  for (double d : x) m += d;
  m /= x.size();
  for (double d : x) v += (d - m) * (d - m);
  v /= x.size() - 1;
  CHECK(std::abs(m) < 0.05);
  CHECK(std::abs(v - 1.0) < 0.1);
  CHECK(t.divergence_count() == 0);

  for (auto kind : {MetricKind::diagonal, MetricKind::dense}) {
    auto cfg = small_config(2500, 1000, 4, 4);
    cfg.metric = kind;
    const Trace c = run_chains(Gaussian(2, 0.8), cfg);
    const auto a = c.pooled_draws(0), b = c.pooled_draws(1);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
      sab += (a[i] - ma) * (b[i] - mb);
    }
    CHECK(std::abs(sab / std::sqrt(saa * sbb) - 0.8) < 0.05);
  }
}

TEST_CASE("slice weighting also targets the right distribution") {
  auto cfg = small_config(2500, 500, 4, 12);
  cfg.weighting = TreeWeighting::slice;
  const auto x = run_chains(Gaussian(1), cfg).pooled_draws(0);
  double m = 0, v = 0;
  for (double d : x) m += d;
  m /= x.size();
  for (double d : x) v += (d - m) * (d - m);
  v /= x.size() - 1;
  CHECK(std::abs(m) < 0.05);
  CHECK(std::abs(v - 1.0) < 0.1);
}

TEST_CASE("moment error shrinks with more draws") {
  const auto err = [](std::size_t draws) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const auto x = run_chains(Gaussian(1), small_config(draws, 300, 1, 100 + seed)).pooled_draws(0);
      double m = 0;
      for (double d : x) m += d;
      total += std::abs(m / x.size());
    }
    return total / 8;
  };
  CHECK(err(4000) < err(100));
}

TEST_CASE("dual averaging") {
  DualAveraging up(0.8);
  up.restart(0.1);
  double prev = up.log_step();
  for (int i = 0; i < 200; ++i) {
    up.learn(1.0);
    CHECK(up.log_step() > prev);
    prev = up.log_step();
  }
  // The first update moves toward mu = log(10 * step) whatever the statistic.
  DualAveraging down(0.8);
  down.restart(0.1);
  down.learn(0.0);
  prev = down.log_step();
  for (int i = 0; i < 200; ++i) {
    down.learn(0.0);
    CHECK(down.log_step() < prev);
    prev = down.log_step();
  }
  DualAveraging steady(0.8);
  steady.restart(0.1);
  std::vector<double> bars;
  for (int i = 0; i < 1000; ++i) {
    steady.learn(0.8);
    bars.push_back(steady.log_step_bar());
  }
  for (std::size_t i = 900; i < 1000; ++i)
    for (std::size_t j = i; j < 1000; ++j) CHECK(std::abs(bars[i] - bars[j]) < 1e-3);
  CHECK(std::exp(steady.log_step_bar()) == doctest::Approx(steady.final_step_size()));
}

TEST_CASE("run_chains shape, determinism and edge configurations") {
  const Gaussian g(2, 0.3);
  auto cfg = small_config(200, 100, 3, 77);
  const Trace a = run_chains(g, cfg);
  cfg.threads = 1;
  const Trace b = run_chains(g, cfg);
  CHECK(a.samples.size() == 3 * 200 * 2);
  CHECK(a.samples == b.samples);
  CHECK(a.step_sizes == b.step_sizes);
  CHECK(a.divergent == b.divergent);
  CHECK(a.names == std::vector<std::string>{"theta[0]", "theta[1]"});
  cfg.seed = 78;
  CHECK(run_chains(g, cfg).samples != a.samples);

  const Trace one = run_chains(g, small_config(1, 0, 1, 5));
  CHECK(one.chains == 1);
  CHECK(one.draws == 1);
  CHECK(one.samples.size() == 2);
  CHECK(one.step_sizes[0] == 1.0);

  CHECK_THROWS_AS(run_chains(g, small_config(0, 0, 1, 5)), std::invalid_argument);
  CHECK_THROWS_AS(run_chains(g, small_config(1, 0, 0, 5)), std::invalid_argument);
}

TEST_CASE("divergences are reported") {
  CHECK_THROWS_AS(run_chains(Truncated(1e-6), small_config(20, 0, 1, 1)), ConvergenceError);
  const Trace t = run_chains(Truncated(0.5), small_config(200, 0, 1, 1));
  CHECK(t.divergence_count() > 20);
  CHECK_FALSE(t.warnings.empty());
  for (double x : t.pooled_draws(0)) CHECK(std::abs(x) < 0.5);
}

TEST_CASE("dirichlet direct sampling") {
  Philox4x32 rng(21, 0);
  const auto uniform = dirichlet_direct_sample(Vector::Ones(4), 50000, rng);
  Vector mean = Vector::Zero(4);
  for (const auto& d : uniform) {
    CHECK(std::abs(d.sum() - 1.0) < 1e-12);
    mean += d;
  }
  mean /= 50000.0;
  for (int i = 0; i < 4; ++i) CHECK(std::abs(mean[i] - 0.25) < 0.01);

  Vector skew(2);
  skew << 1000, 1;
  double m0 = 0;
  for (const auto& d : dirichlet_direct_sample(skew, 50000, rng)) m0 += d[0];
  CHECK(std::abs(m0 / 50000 - 1000.0 / 1001.0) < 0.005);

  Vector tiny(3);
  tiny << 1e-3, 1e-3, 1e-3;
  for (const auto& d : dirichlet_direct_sample(tiny, 1000, rng)) {
    CHECK(std::abs(d.sum() - 1.0) < 1e-12);
    CHECK((d.array() >= 0.0).all());
  }
  CHECK_THROWS_AS(dirichlet_direct_sample(Vector::Zero(2), 1, rng), std::invalid_argument);
}

TEST_CASE("transform log-Jacobians integrate to the constrained mass") {
  // Integral of exp(log p) over x equals the integral of the transformed
  // density over y.
  const TransformedTarget positive(std::make_shared<GammaShape2>(), {Transform::positive()});
  const double gamma_mass = trapezoid(
      [&](double y) {
        Vector g;
        return std::exp(positive.log_density(Vector::Constant(1, y), g));
      },
      -40, 6, 20000);
  CHECK(std::abs(gamma_mass - 1.0) < 1e-6);  // Gamma(2) = 1

  const TransformedTarget interval(std::make_shared<BetaOnInterval>(),
                                   {Transform::interval(1.0, 3.0)});
  const double beta_mass = trapezoid(
      [&](double y) {
        Vector g;
        return std::exp(interval.log_density(Vector::Constant(1, y), g));
      },
      -40, 40, 20000);
  CHECK(std::abs(beta_mass - 2.0 / 12.0) < 1e-6);  // 2 * B(2, 3)
}

TEST_CASE("transformed gradients match finite differences") {
  Vector alpha(4);
  alpha << 1.5, 2.0, 0.7, 3.0;
  const TransformedTarget t(std::make_shared<DirichletModel>(alpha), {Transform::simplex(4)});
  CHECK(t.dimension() == 3);
  CHECK(t.constrained_dimension() == 4);
  Philox4x32 rng(2, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector y(3);
    for (int i = 0; i < 3; ++i) y[i] = 4 * rng.uniform() - 2;
    Vector g, scratch;
    t.log_density(y, g);
    for (int i = 0; i < 3; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(y[i]));
      Vector yp = y, ym = y;
      yp[i] += h;
      ym[i] -= h;
      const double fd = (t.log_density(yp, scratch) - t.log_density(ym, scratch)) / (2 * h);
      CHECK(std::abs(g[i] - fd) / std::max({std::abs(fd), std::abs(g[i]), 1e-3}) < 1e-5);
    }
  }
}

TEST_CASE("stick-breaking round-trip") {
  Philox4x32 rng(3, 0);
  for (std::size_t k : {2u, 3u, 5u, 10u}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> y(k - 1), x(k), back(k - 1), x2(k);
      for (auto& v : y) v = 6 * rng.uniform() - 3;
      stick_breaking_forward(y.data(), k, x.data());
      double s = 0;
      for (double v : x) {
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
      stick_breaking_inverse(x.data(), k, back.data());
      for (std::size_t i = 0; i + 1 < k; ++i) CHECK(std::abs(back[i] - y[i]) < 1e-12);
      stick_breaking_forward(back.data(), k, x2.data());
      for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(x2[i] - x[i]) < 1e-12);
    }
  }
}

TEST_CASE("trace serialization") {
  const Trace t = run_chains(Gaussian(2, 0.5), small_config(50, 50, 2, 9));
  const std::string csv = trace_to_csv(t);
  CHECK(csv.rfind("chain,draw,param,value\n", 0) == 0);
  const Trace back = trace_from_csv(csv);
  CHECK(back.names == t.names);
  CHECK(back.chains == 2);
  CHECK(back.draws == 50);
  CHECK(back.samples == t.samples);
  CHECK_THROWS_AS(trace_from_csv("chain,draw,param,value\n0,0,a,1\n0,1,b,2\n"), DataError);
  CHECK_THROWS_AS(trace_from_csv("x,y\n"), DataError);

  const auto json = nlohmann::json::parse(trace_to_json(t));
  CHECK(json.contains("warnings"));
  const auto div = nlohmann::json::parse(divergence_report_json(t));
  CHECK(div.contains("warnings"));
}

TEST_CASE("sampler config validation and JSON") {
  CHECK_NOTHROW(score_sampler_defaults().validate());
  CHECK(score_sampler_defaults().draws == 5000);
  CHECK(score_sampler_defaults().tune == 1000);
  CHECK(score_sampler_defaults().chains == 4);
  CHECK(glm_sampler_defaults().draws == 2000);
  SamplerConfig bad;
  bad.target_accept = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.max_tree_depth = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  SamplerConfig c = small_config(7, 3, 2, 99);
  c.metric = MetricKind::dense;
  c.weighting = TreeWeighting::slice;
  const SamplerConfig back = config_from_json(config_to_json(c));
  CHECK(back.draws == 7);
  CHECK(back.tune == 3);
  CHECK(back.chains == 2);
  CHECK(back.seed == 99);
  CHECK(back.metric == MetricKind::dense);
  CHECK(back.weighting == TreeWeighting::slice);
}
