#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "drm/ingest.hpp"

namespace drm::causal {

inline constexpr int kHours = 24;

template <typename T>
using HourArray = std::array<T, kHours>;

enum class RegressionMode {
  kernel,       // Nadaraya-Watson, Gaussian product kernel
  exact_match,  // mean of rows whose covariates equal the query exactly
};

struct KernelEstimate {
  double value = 0.0;
  bool fallback = false;  // every kernel weight underflowed; 3-NN mean used
};

/// Nadaraya-Watson regression with a Gaussian product kernel over z-scored
/// covariates. Bandwidths are expressed in standardized units; by default
/// each column gets Silverman's rule (floored at 1e-3). Constant columns do
/// not contribute to the kernel distance.
class KernelRegressor {
public:
  static constexpr std::size_t kMinPoints = 5;
  static constexpr double kMinBandwidth = 1e-3;

  /// covariates: one row per observation. Throws std::invalid_argument
  /// with fewer than kMinPoints rows.
  KernelRegressor(Eigen::MatrixXd covariates, Eigen::VectorXd y,
                  std::optional<double> bandwidth = std::nullopt);

  KernelEstimate predict(const Eigen::VectorXd& query) const;

  const Eigen::VectorXd& bandwidths() const { return bandwidth_; }

private:
  Eigen::MatrixXd z_;  // standardized covariates
  Eigen::VectorXd y_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
  Eigen::VectorXd bandwidth_;
  std::vector<bool> active_;
};

/// One-shot convenience wrapper around KernelRegressor.
KernelEstimate kernel_regress(const Eigen::VectorXd& query, const Eigen::MatrixXd& covariates,
                              const Eigen::VectorXd& y,
                              std::optional<double> bandwidth = std::nullopt);

/// e_y -/+ z_{alpha/2} * sigma.
std::pair<double, double> z_interval(double e_y, double sigma, double ci);

struct CausalOptions {
  RegressionMode mode = RegressionMode::kernel;
  double ci = 0.95;
  std::optional<double> bandwidth;  // override, standardized units
  std::size_t threads = 0;          // 0 = default_thread_count()
};

/// Interventional mean consumption E[Y | do(price)] for one hour.
struct CausalEstimate {
  std::string consumer_id;
  int hour = 0;
  double price = 0.0;
  double e_y = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double ci = 0.95;
  std::size_t n_points = 0;  // rows observed at (hour, price)
  bool fallback = false;
};

struct CausalQuery {
  std::string consumer_id;
  double price = 0.0;
};

/// g-formula effect of setting the price for one consumer. Adjusts for
/// Z = (hour, day of week, week of year): for every hour h the estimate is
/// the average over the consumer's observed (day, week) pairs of
/// E[Y | price, h, day, week]. Hours with no row at the queried price are
/// absent. Throws DataError if the consumer never saw the price.
class ConsumerEffectModel {
public:
  ConsumerEffectModel(std::string consumer_id, std::vector<FeatureRow> rows,
                      CausalOptions options = {});

  HourArray<std::optional<CausalEstimate>> effect(double price) const;
  const std::vector<FeatureRow>& rows() const { return rows_; }

private:
  double regress(double price, int hour, int day, int week, bool& fallback) const;

  std::string consumer_id_;
  std::vector<FeatureRow> rows_;
  CausalOptions options_;
  std::optional<KernelRegressor> regressor_;
  struct CellKey {
    double price;
    int hour, day, week;
    auto operator<=>(const CellKey&) const = default;
  };
  std::map<CellKey, std::pair<double, std::size_t>> cells_;  // exact-match sums and counts
  std::vector<std::pair<std::pair<int, int>, std::size_t>> z_freq_;  // (day, week) -> count
};

HourArray<std::optional<CausalEstimate>> g_formula_effect(const CausalQuery& query,
                                                          const Dataset& dataset,
                                                          const CausalOptions& options = {});

/// Every (price, hour) estimate for one consumer over the dataset's tariff
/// levels that the consumer experienced.
std::vector<CausalEstimate> estimate_consumer(const Dataset& dataset,
                                              std::string_view consumer_id,
                                              const CausalOptions& options = {});

inline constexpr double kElasticityEpsilon = 1e-6;

/// Per-consumer elasticity relative to default-price consumption:
/// (E_y(p, h) - E_y(default, h)) / E_y(default, h). Index 0 of `prices` is
/// always the default price.
struct ElasticityProfile {
  std::string consumer_id;
  std::vector<double> prices;
  std::vector<std::string> labels;
  std::vector<HourArray<std::optional<double>>> elasticity;  // [price][hour]
  std::vector<HourArray<std::optional<double>>> e_y;         // [price][hour], kW
  HourArray<std::optional<double>> baseline_e_y;             // default price, kW

  std::size_t price_index(double price) const;  // throws std::out_of_range
};

ElasticityProfile derive_elasticity(const std::vector<CausalEstimate>& estimates,
                                    double default_price,
                                    const std::vector<TariffLevel>& tariffs = {});

/// Non-negative integer counts, outcomes x 24 hours.
struct WeightMatrix {
  std::vector<std::string> outcomes;
  std::vector<HourArray<long>> counts;

  std::size_t size() const { return outcomes.size(); }
  /// n_h = sum over outcomes of c_{i,h}.
  HourArray<long> totals() const;
  /// Throws DataError if a count is negative or shapes disagree.
  void validate() const;
};

/// c_{i,h} = round(scale_max * |e_{i,h}| / max |e|); absent entries are 0.
WeightMatrix rank_weights(const std::vector<HourArray<std::optional<double>>>& elasticities,
                          std::vector<std::string> outcomes, int scale_max = 100);

/// Outcomes are the consumer's price levels (labelled by tariff label).
WeightMatrix rank_weights(const ElasticityProfile& profile, int scale_max = 100);

/// Outcomes are consumers at one fixed price, labelled `consumer@price`.
WeightMatrix rank_weights_pooled(const std::vector<ElasticityProfile>& profiles, double price,
                                 int scale_max = 100);

/// CSV with header `outcome,h0,...,h23`.
std::string weights_to_csv(const WeightMatrix& weights);
WeightMatrix weights_from_csv(std::string_view text);

/// JSON array of {consumer_id, hour, price, e_y, lower, upper, n_points,
/// elasticity, fallback}.
std::string causal_to_json(const std::vector<CausalEstimate>& estimates,
                           const std::vector<ElasticityProfile>& profiles);
std::vector<CausalEstimate> causal_from_json(std::string_view text);

}  // namespace drm::causal
