#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "drm/causal.hpp"
#include "drm/diagnostics.hpp"
#include "drm/ingest.hpp"
#include "drm/mcmc/sampler.hpp"

namespace drm::glm {

using causal::kHours;

/// Regressor columns that are z-scored before fitting.
enum Column : std::size_t { kTempHigh, kTempLow, kTempAvg, kAvgTimesHour, kDiffTimesHour };
inline constexpr std::size_t kColumns = 5;
inline constexpr std::array<const char*, kColumns> kColumnNames = {
    "temp_high", "temp_low", "temp_avg", "consumption_avg*hour", "consumption_difference*hour"};
/// Per-price coefficient family for each column.
inline constexpr std::array<const char*, kColumns> kCoefficientNames = {"th", "tl", "ta", "yavg",
                                                                        "ydiff"};

struct Standardization {
  double mean = 0.0;
  double sd = 1.0;
  bool degenerate = false;  // constant column; standardizes to 0

  double apply(double x) const { return degenerate ? 0.0 : (x - mean) / sd; }
};

struct DesignRow {
  int hour = 0;
  double price = 0.0;
  std::size_t price_block = 0;  // index into GlmDesign::prices
  double price_sq = 0.0;
  double price_cu = 0.0;
  double temp_high = 0.0;
  double temp_low = 0.0;
  double temp_avg = 0.0;
  double consumption_avg = 0.0;         // kW
  double consumption_difference = 0.0;  // kW, default minus this price
  double y = 0.0;                       // observed elasticity
  std::array<double, kColumns> x{};     // standardized regressors
};

/// One row per (price, hour), in price blocks: the default price first, then
/// the remaining levels in tariff order, hours 0-23 inside each block.
struct GlmDesign {
  std::string consumer_id;
  std::vector<double> prices;
  std::vector<std::string> labels;
  std::vector<DesignRow> rows;
  std::array<Standardization, kColumns> scaling{};
  std::vector<std::string> degenerate_columns;

  std::size_t n_prices() const { return prices.size(); }
  std::size_t row_index(std::size_t price_block, int hour) const {
    return price_block * kHours + static_cast<std::size_t>(hour);
  }
  /// Raw regressor value of one column for a row.
  static double raw_column(const DesignRow& row, std::size_t column);
};

/// Raw inputs of one design row before standardization.
struct RawRow {
  int hour = 0;
  double price = 0.0;
  double temp_high = 0.0;
  double temp_low = 0.0;
  double temp_avg = 0.0;
  double consumption_avg = 0.0;
  double consumption_difference = 0.0;
  double y = 0.0;
};

/// Orders rows into price blocks, computes powers of price and the
/// standardization constants. `prices[0]` is the default level. Throws
/// DataError listing any missing or duplicated (price, hour) cell.
GlmDesign make_design(std::string consumer_id, std::vector<double> prices,
                      std::vector<std::string> labels, const std::vector<RawRow>& rows);

/// Observed elasticity from the profile, temperature aggregates from the
/// consumer's dataset rows at each (price, hour), consumption averages from
/// the profile's causal estimates.
GlmDesign build_design(const causal::ElasticityProfile& profile, const Dataset& dataset);

struct NormalPrior {
  double mean = 0.0;
  double sd = 10.0;
};

struct PriorSpec {
  NormalPrior beta0;
  NormalPrior beta1;
  NormalPrior beta2;  // only with separate_cubic
  NormalPrior th, tl, ta, yavg, ydiff;
  double nu_lo = 0.0;
  double nu_hi = 1.0;
  double sigma_rate = 1.0;

  void validate() const;  // std::invalid_argument
};

enum class Likelihood { student_t, normal };

struct GlmOptions {
  bool separate_cubic = false;  // independent beta2 for price^3
  Likelihood likelihood = Likelihood::student_t;
};

/// Parameter layout in constrained coordinates.
struct ParameterLayout {
  std::size_t n_prices = 0;
  bool separate_cubic = false;

  std::size_t beta0(int h) const { return static_cast<std::size_t>(h); }
  std::size_t beta1(int h) const { return kHours + static_cast<std::size_t>(h); }
  std::size_t beta2(int h) const { return 2 * kHours + static_cast<std::size_t>(h); }
  std::size_t coefficient(std::size_t column, std::size_t price_block) const {
    return (separate_cubic ? 3 : 2) * kHours + column * n_prices + price_block;
  }
  std::size_t nu() const { return coefficient(kColumns, 0); }
  std::size_t sigma() const { return nu() + 1; }
  std::size_t size() const { return sigma() + 1; }

  std::vector<std::string> names(const std::vector<std::string>& labels) const;
};

/// log Student-T density with precision lambda.
double student_t_logpdf(double x, double mu, double lambda, double nu);

/// Log posterior in constrained coordinates with its analytic gradient.
class GlmModel final : public mcmc::ConstrainedModel {
public:
  GlmModel(GlmDesign design, PriorSpec priors, GlmOptions options = {});

  std::size_t dimension() const override { return layout_.size(); }
  /// Returns -inf for out-of-support or non-finite values.
  double log_density(const mcmc::Vector& params, mcmc::Vector& grad) const override;
  std::vector<std::string> parameter_names() const override;

  /// Same density, but a non-finite row contribution throws DataError naming
  /// the row.
  double log_posterior(const mcmc::Vector& params, mcmc::Vector& grad) const;

  /// Linear predictor for one design row.
  double mu(const mcmc::Vector& params, std::size_t row) const;

  const GlmDesign& design() const { return design_; }
  const ParameterLayout& layout() const { return layout_; }
  std::vector<mcmc::Transform> transforms() const;

private:
  double evaluate(const mcmc::Vector& params, mcmc::Vector& grad, bool strict) const;

  GlmDesign design_;
  PriorSpec priors_;
  GlmOptions options_;
  ParameterLayout layout_;
};

struct GlmPosterior {
  GlmDesign design;
  PriorSpec priors;
  GlmOptions options;
  mcmc::SamplerConfig config;
  ParameterLayout layout;
  mcmc::Trace trace;
  diagnostics::DiagnosticsSummary summary;
  std::vector<std::string> warnings;

  std::size_t n_draws() const { return trace.chains * trace.draws; }
  /// Constrained parameter vector of pooled draw d.
  mcmc::Vector draw(std::size_t d) const;
  /// Posterior mean of mu for every design row.
  std::vector<double> row_means() const;
};

/// NUTS fit. Warns when R-hat exceeds 1.05; rethrows divergence-dominated
/// runs as ConvergenceError.
GlmPosterior fit(const GlmDesign& design, const PriorSpec& priors,
                 const mcmc::SamplerConfig& config, const GlmOptions& options = {});

struct Covariates {
  double temp_high = 0.0;
  double temp_low = 0.0;
  double temp_avg = 0.0;
  double consumption_avg = 0.0;
  double consumption_difference = 0.0;
};

struct Prediction {
  double price = 0.0;
  int hour = 0;
  double mean = 0.0;  // posterior mean of mu
  double q05 = 0.0;   // predictive quantiles (noise included)
  double q95 = 0.0;
  std::size_t n_draws = 0;
  std::vector<double> mu_draws;
  std::vector<double> draws;  // predictive
};

/// Per-price coefficients at an unobserved price are interpolated linearly
/// between the neighbouring observed levels (clamped outside the range).
/// Noise uses Philox(seed, 1).
Prediction predict_elasticity(const GlmPosterior& post, double price, int hour,
                              const Covariates& covariates, std::uint64_t seed = 0);

/// mu of one pooled draw at (price, hour, covariates).
double mu_at(const GlmPosterior& post, const mcmc::Vector& params, double price, int hour,
             const std::array<double, kColumns>& standardized);

struct RegressionLines {
  std::optional<int> hour;      // nullopt: averaged over hours
  std::vector<double> grid;
  std::vector<std::size_t> draw_index;
  std::vector<std::vector<double>> curves;  // [draw][grid]
  std::vector<double> mean;                 // pointwise mean of curves
};

/// Posterior regression lines of mu against price with the standardized
/// regressors at 0, for `n_draws` evenly thinned draws.
RegressionLines regression_lines(const GlmPosterior& post, const std::vector<double>& grid,
                                 std::optional<int> hour, std::size_t n_draws = 100);

/// {consumer_id, params: [{name, mean, sd, hpd5, hpd95, r_hat, ess_bulk,
/// natural_scale}], trace, r_hat, ess, standardization, priors, options,
/// config, design}.
std::string posterior_to_json(const GlmPosterior& post, std::string_view trace_ref);
/// Rebuilds a posterior from its JSON and the trace it references.
GlmPosterior posterior_from_json(std::string_view text, const mcmc::Trace& trace);
/// Trace path recorded in a posterior JSON.
std::string trace_ref_from_json(std::string_view text);

std::string prediction_to_json(const Prediction& p);

}  // namespace drm::glm
