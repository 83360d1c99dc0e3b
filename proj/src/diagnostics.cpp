#include "drm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

namespace drm::diagnostics {

namespace {

using Chains = std::vector<std::vector<double>>;

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {  // ddof = 1
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? s / static_cast<double>(v.size() - 1) : 0.0;
}

Chains split(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    // With an odd count the middle draw is dropped.
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

/// Replaces every value by Phi^-1((rank - 3/8) / (S + 1/4)) over the pooled
/// draws, averaging ranks of ties.
Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t d = 0; d < chains[c].size(); ++d)
      pooled.emplace_back(chains[c][d], c * chains[0].size() + d);
  std::sort(pooled.begin(), pooled.end());
  const double s = static_cast<double>(pooled.size());
  std::vector<double> z(pooled.size());
  const boost::math::normal standard;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1].first == pooled[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double zval = boost::math::quantile(standard, (rank - 0.375) / (s + 0.25));
    for (std::size_t k = i; k <= j; ++k) z[pooled[k].second] = zval;
    i = j + 1;
  }
  Chains out = chains;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t d = 0; d < chains[c].size(); ++d) out[c][d] = z[c * chains[0].size() + d];
  return out;
}

double classic_r_hat(const Chains& chains) {
  const double n = static_cast<double>(chains[0].size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(var_of(c));
  }
  const double w = mean_of(vars);
  if (!(w > 0.0)) return 1.0;
  const double b = n * var_of(means);
  const double var_hat = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_hat / w);
}

Chains from_trace(const mcmc::Trace& trace, std::size_t param) {
  Chains chains;
  for (std::size_t c = 0; c < trace.chains; ++c) chains.push_back(trace.chain_draws(c, param));
  return chains;
}

}  // namespace

namespace {

void check_r_hat_shape(const Chains& chains) {
  if (chains.size() < 2)
    throw std::invalid_argument("r_hat needs at least 2 chains; use ess_bulk for a single chain");
  for (const auto& c : chains)
    if (c.size() < 4 || c.size() != chains[0].size())
      throw std::invalid_argument("r_hat needs >= 4 equal-length draws per chain");
}

}  // namespace

double split_r_hat(const Chains& chains) {
  check_r_hat_shape(chains);
  return classic_r_hat(split(chains));
}

double r_hat(const Chains& chains) {
  check_r_hat_shape(chains);
  const Chains halves = split(chains);
  const double bulk = classic_r_hat(rank_normalize(halves));

  std::vector<double> pooled;
  for (const auto& c : halves) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2),
                   pooled.end());
  const double median = pooled[pooled.size() / 2];
  Chains folded = halves;
  for (auto& c : folded)
    for (double& x : c) x = std::abs(x - median);
  const double tail = classic_r_hat(rank_normalize(folded));
  return std::max(bulk, tail);
}

double r_hat(const mcmc::Trace& trace, std::size_t param) { return r_hat(from_trace(trace, param)); }

double ess_basic(const Chains& chains) {
  const std::size_t m = chains.size();
  if (m == 0) throw std::invalid_argument("ess needs at least one chain");
  const std::size_t n = chains[0].size();
  if (n < 4) throw std::invalid_argument("ess needs >= 4 draws per chain");

  std::vector<double> chain_mean(m);
  for (std::size_t c = 0; c < m; ++c) chain_mean[c] = mean_of(chains[c]);
  // Mean over chains of the biased autocovariance at `lag`.
  auto mean_acov = [&](std::size_t lag) {
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      const auto& x = chains[c];
      for (std::size_t i = 0; i + lag < n; ++i)
        s += (x[i] - chain_mean[c]) * (x[i + lag] - chain_mean[c]);
      total += s / static_cast<double>(n);
    }
    return total / static_cast<double>(m);
  };

  const double nd = static_cast<double>(n);
  const double mean_var = mean_acov(0) * nd / (nd - 1.0);
  if (!(mean_var > 0.0)) return static_cast<double>(m * n);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += var_of(chain_mean);

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  long t = 1;
  const long nl = static_cast<long>(n);
  while (t < nl - 3 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(static_cast<std::size_t>(t + 1))) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(static_cast<std::size_t>(t + 2))) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[static_cast<std::size_t>(t + 1)] = rho_even;
      rho[static_cast<std::size_t>(t + 2)] = rho_odd;
    }
    t += 2;
  }
  const long max_t = t - 2;  // may be -1 when the first pair is already negative
  if (rho_even > 0.0 && max_t + 1 < nl) rho[static_cast<std::size_t>(max_t + 1)] = rho_even;

  // Geyer initial monotone sequence.
  for (long u = 1; u <= max_t - 2; u += 2) {
    const auto i = static_cast<std::size_t>(u);
    if (rho[i + 1] + rho[i + 2] > rho[i - 1] + rho[i]) {
      rho[i + 1] = 0.5 * (rho[i - 1] + rho[i]);
      rho[i + 2] = rho[i + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (long u = 0; u <= max_t; ++u) tau += 2.0 * rho[static_cast<std::size_t>(u)];
  if (max_t + 1 < nl) tau += rho[static_cast<std::size_t>(max_t + 1)];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double ess_bulk(const Chains& chains) {
  if (chains.empty()) throw std::invalid_argument("ess needs at least one chain");
  return ess_basic(rank_normalize(split(chains)));
}

double ess_bulk(const mcmc::Trace& trace, std::size_t param) {
  return ess_bulk(from_trace(trace, param));
}

Interval hpd_interval(std::vector<double> draws, double mass) {
  if (draws.empty()) throw std::invalid_argument("hpd_interval needs draws");
  if (!(mass > 0.0 && mass <= 1.0)) throw std::invalid_argument("hpd mass must be in (0, 1]");
  std::sort(draws.begin(), draws.end());
  const std::size_t n = draws.size();
  const auto keep = std::max<std::size_t>(
      1, std::min(n, static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n) - 1e-9))));
  Interval best{draws.front(), draws[keep - 1]};
  for (std::size_t i = 1; i + keep <= n; ++i) {
    const double w = draws[i + keep - 1] - draws[i];
    if (w < best.width()) best = {draws[i], draws[i + keep - 1]};
  }
  return best;
}

double silverman_bandwidth(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 2) return 0.0;
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : sorted) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

KdeCurve kde(std::span<const double> draws, std::size_t grid_size, double lo, double hi) {
  KdeCurve curve;
  if (grid_size < 2) throw std::invalid_argument("kde grid needs at least 2 points");
  const auto [mn, mx] = std::minmax_element(draws.begin(), draws.end());
  if (draws.size() < 2 || *mn == *mx) {
    curve.degenerate = true;
    return curve;
  }
  curve.bandwidth = silverman_bandwidth(draws);
  const double h = curve.bandwidth;
  const double norm = 1.0 / (static_cast<double>(draws.size()) * h * std::sqrt(2.0 * M_PI));
  curve.grid.resize(grid_size);
  curve.density.assign(grid_size, 0.0);
  const double step = (hi - lo) / static_cast<double>(grid_size - 1);
  for (std::size_t g = 0; g < grid_size; ++g) {
    const double x = lo + step * static_cast<double>(g);
    curve.grid[g] = x;
    double s = 0.0;
    for (double d : draws) {
      const double u = (x - d) / h;
      s += std::exp(-0.5 * u * u);
    }
    curve.density[g] = s * norm;
  }
  return curve;
}

KdeCurve kde(std::span<const double> draws, std::size_t grid_size) {
  if (draws.size() < 2) return KdeCurve{{}, {}, 0.0, true};
  const auto [mn, mx] = std::minmax_element(draws.begin(), draws.end());
  const double h = silverman_bandwidth(draws);
  return kde(draws, grid_size, *mn - 3.0 * h, *mx + 3.0 * h);
}

std::vector<std::size_t> local_maxima(const std::vector<double>& values) {
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < values.size(); ++i)
    if (values[i] > values[i - 1] && values[i] >= values[i + 1]) peaks.push_back(i);
  return peaks;
}

double DiagnosticsSummary::max_r_hat() const {
  double m = 1.0;
  for (const auto& p : parameters)
    if (p.r_hat) m = std::max(m, *p.r_hat);
  return m;
}

double DiagnosticsSummary::min_ess() const {
  double m = INFINITY;
  for (const auto& p : parameters) m = std::min(m, p.ess_bulk);
  return m;
}

DiagnosticsSummary summarize(const mcmc::Trace& trace, double runtime_seconds) {
  DiagnosticsSummary out;
  out.divergences = trace.divergence_count();
  out.runtime_seconds = runtime_seconds;
  const double total = static_cast<double>(trace.chains * trace.draws);
  for (std::size_t p = 0; p < trace.dimension(); ++p) {
    ParameterSummary s;
    s.name = trace.names[p];
    const auto pooled = trace.pooled_draws(p);
    s.mean = mean_of(pooled);
    s.sd = std::sqrt(var_of(pooled));
    const Interval hpd = hpd_interval(pooled, 0.9);
    s.hpd5 = hpd.low;
    s.hpd95 = hpd.high;
    if (trace.chains >= 2 && trace.draws >= 4) s.r_hat = r_hat(trace, p);
    // Reported ESS is capped at the number of draws.
    s.ess_bulk = trace.draws >= 8 ? std::min(total, ess_bulk(trace, p)) : total;
    out.parameters.push_back(std::move(s));
  }
  return out;
}

double two_sided_z(double ci) {
  if (!(ci > 0.0 && ci < 1.0)) throw std::invalid_argument("confidence level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * ci);
}

}  // namespace drm::diagnostics
