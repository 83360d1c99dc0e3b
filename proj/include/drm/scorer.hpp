#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "drm/causal.hpp"
#include "drm/diagnostics.hpp"
#include "drm/mcmc/sampler.hpp"

namespace drm::scorer {

using causal::HourArray;
using causal::kHours;

enum class Mode {
  per_consumer,  // outcomes are one consumer's price levels
  pooled,        // outcomes are consumers at one fixed price
};

std::string to_string(Mode mode);
Mode mode_from_string(std::string_view text);  // "per-consumer" | "pooled"

/// Independent Dirichlet(alpha_h) -> Multinomial(c_h) model for every hour.
struct DirichletMultinomialModel {
  Mode mode = Mode::per_consumer;
  std::string subject;           // consumer id, or "pooled"
  std::optional<double> price;   // pooled mode only
  causal::WeightMatrix counts;   // k x 24
  Eigen::MatrixXd alpha;         // k x 24, strictly positive

  std::size_t k() const { return counts.size(); }
  /// Throws std::invalid_argument on shape mismatch or alpha <= 0.
  void validate() const;
};

/// Default prior is the uniform Dirichlet (all ones).
DirichletMultinomialModel build_per_consumer_model(const causal::WeightMatrix& weights,
                                                   double alpha = 1.0,
                                                   std::string subject = "");
DirichletMultinomialModel build_per_consumer_model(const causal::WeightMatrix& weights,
                                                   const Eigen::MatrixXd& alpha,
                                                   std::string subject = "");

/// Outcome labels must all read `consumer@price` with the same price.
DirichletMultinomialModel build_pooled_model(const causal::WeightMatrix& weights,
                                             double alpha = 1.0);
/// Builds the pooled weights from profiles; every profile must carry `price`.
DirichletMultinomialModel build_pooled_model(const std::vector<causal::ElasticityProfile>& profiles,
                                             double price, int scale_max = 100,
                                             double alpha = 1.0);

/// (c_i + alpha_i) / (n_h + sum alpha), k x 24.
Eigen::MatrixXd posterior_mean(const DirichletMultinomialModel& model);

/// log B(c + alpha) - log B(alpha) for one hour, no multinomial coefficient.
double marginal_likelihood(const DirichletMultinomialModel& model, int hour);
double log_dirichlet_multinomial(const std::vector<double>& alpha,
                                 const std::vector<long>& counts);

enum class SamplingMethod {
  nuts,       // NUTS on the stick-breaking simplex
  conjugate,  // iid draws from Dirichlet(alpha + c)
};

std::string to_string(SamplingMethod method);
SamplingMethod method_from_string(std::string_view text);

struct ResponseScore {
  Mode mode = Mode::per_consumer;
  std::string subject;
  std::optional<double> price;
  std::vector<std::string> outcomes;
  Eigen::MatrixXd alpha;
  causal::WeightMatrix counts;
  Eigen::MatrixXd mean;        // trace mean, k x 24
  Eigen::MatrixXd hpd5;        // lower bound of the 90% HPD interval
  Eigen::MatrixXd hpd95;       // upper bound
  Eigen::MatrixXd exact_mean;  // conjugate closed form
  HourArray<bool> no_data{};
  std::vector<mcmc::Trace> traces;  // one per hour, k constrained coordinates
  mcmc::SamplerConfig config;
  SamplingMethod method = SamplingMethod::nuts;
  double max_r_hat = 1.0;
  double min_ess = 0.0;
  std::size_t divergences = 0;
  std::vector<std::string> warnings;

  std::size_t k() const { return outcomes.size(); }
};

/// Samples every hour independently (hours run in parallel, chains within an
/// hour sequentially). Hour h uses seed mix(config.seed, h).
ResponseScore sample_posterior(const DirichletMultinomialModel& model,
                               const mcmc::SamplerConfig& config,
                               SamplingMethod method = SamplingMethod::nuts);

std::uint64_t hour_seed(std::uint64_t seed, int hour);

struct ScoreRow {
  std::string outcome;
  int hour = 0;
  double mean = 0.0;
  double hpd5 = 0.0;
  double hpd95 = 0.0;
  double exact_mean = 0.0;
  bool no_data = false;
  diagnostics::KdeCurve kde;  // 256 points on [0, 1]; empty when no trace
};

inline constexpr std::size_t kScoreKdePoints = 256;

/// k x 24 rows ordered by outcome, then hour.
std::vector<ScoreRow> summarize_scores(const ResponseScore& score, bool with_kde = true);

/// {mode, subject, price, outcomes, hours, mean, hpd5, hpd95, exact_mean,
/// alpha, counts, no_data, method, config, seed, diagnostics}; matrices are
/// indexed [outcome][hour].
std::string score_to_json(const ResponseScore& score);
/// Restores everything except the traces.
ResponseScore score_from_json(std::string_view text);

/// All hours in one trace; parameter names are `theta[h][outcome]`.
mcmc::Trace combined_trace(const ResponseScore& score);
/// Splits a combined trace back into per-hour traces of `score`.
void attach_combined_trace(ResponseScore& score, const mcmc::Trace& trace);

}  // namespace drm::scorer
