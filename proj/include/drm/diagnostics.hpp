#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drm/mcmc/sampler.hpp"

namespace drm::diagnostics {

/// Rank-normalized split R-hat (max of the bulk and folded-tail versions).
/// Requires at least 2 chains and 4 draws per chain; a single chain throws
/// std::invalid_argument (use ess_bulk alone in that case). A parameter with
/// zero within-chain variance reports 1.
double r_hat(const mcmc::Trace& trace, std::size_t param);
double r_hat(const std::vector<std::vector<double>>& chains);

/// Split R-hat on the raw draws (no rank normalization). Unlike r_hat it
/// grows without bound as chain means separate.
double split_r_hat(const std::vector<std::vector<double>>& chains);

/// Bulk effective sample size: rank-normalized split chains, Geyer initial
/// monotone sequence. Works with one chain.
double ess_bulk(const mcmc::Trace& trace, std::size_t param);
double ess_bulk(const std::vector<std::vector<double>>& chains);

/// ESS of the raw (not rank-normalized, not split) chains.
double ess_basic(const std::vector<std::vector<double>>& chains);

struct Interval {
  double low = 0.0;
  double high = 0.0;
  double width() const { return high - low; }
};

/// Smallest-width interval containing ceil(mass * n) of the draws.
Interval hpd_interval(std::vector<double> draws, double mass);

/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5), falling back to sd when the IQR
/// is zero.
double silverman_bandwidth(std::span<const double> draws);

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  bool degenerate = false;  // fewer than two distinct draws: no curve
};

/// Gaussian KDE with Silverman bandwidth on [min - 3 bw, max + 3 bw].
KdeCurve kde(std::span<const double> draws, std::size_t grid_size);
/// Same, on a caller-supplied grid range.
KdeCurve kde(std::span<const double> draws, std::size_t grid_size, double lo, double hi);

/// Indices of interior local maxima of a sampled curve.
std::vector<std::size_t> local_maxima(const std::vector<double>& values);

struct ParameterSummary {
  std::string name;
  std::optional<double> r_hat;  // absent with a single chain
  double ess_bulk = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double hpd5 = 0.0;
  double hpd95 = 0.0;
};

struct DiagnosticsSummary {
  std::vector<ParameterSummary> parameters;
  std::size_t divergences = 0;
  double runtime_seconds = 0.0;

  double max_r_hat() const;
  double min_ess() const;
};

/// Per-parameter summary; HPD bounds enclose 90% of pooled draws.
DiagnosticsSummary summarize(const mcmc::Trace& trace, double runtime_seconds = 0.0);

/// Two-sided standard-normal quantile z_{alpha/2} for confidence `ci`.
double two_sided_z(double ci);

}  // namespace drm::diagnostics
