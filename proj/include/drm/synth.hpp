#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drm/causal.hpp"
#include "drm/ingest.hpp"
#include "drm/scorer.hpp"

namespace drm::synth {

using causal::HourArray;
using causal::kHours;

/// e(p, h) = a1 (p - p0) + a2 (p - p0)^2 + a3 (p - p0)^3 with p0 the
/// reference (default) price, so e(p0, h) = 0 for every hour.
using CubicCoefficients = std::array<double, 3>;

/// Ground truth for one synthetic household.
struct SyntheticConsumerSpec {
  std::string consumer_id;
  HourArray<double> baseline_kw{};
  double reference_price = lcl::kDefaultRate;
  HourArray<CubicCoefficients> elasticity{};
  std::map<double, HourArray<double>> probability;  // price -> per hour, in [0, 1]
  double noise_sd_kw = 0.0;
  double temperature_sensitivity = 0.0;  // kW per degree C above 15

  /// Throws std::invalid_argument on negative baseline, probabilities outside
  /// [0, 1], negative noise or a non-positive reference price.
  void validate() const;
  double elasticity_at(double price, int hour) const;
  /// 0 at the reference price; throws std::out_of_range for other prices
  /// missing from `probability`.
  double probability_at(double price, int hour) const;
};

/// Lowest-degree polynomial without constant term through (p - p0, e)
/// pairs: linear for one point, quadratic for two, cubic for three. Throws
/// std::invalid_argument on repeated prices or a point at p0.
CubicCoefficients fit_elasticity(double reference_price,
                                 const std::vector<std::pair<double, double>>& points);

/// Per-day, per-hour tariff labels (Default / High / Low).
struct TariffSchedule {
  std::vector<Timestamp> day_starts;  // UTC midnights, strictly increasing
  std::vector<HourArray<std::string>> labels;

  std::size_t days() const { return day_starts.size(); }
  /// Distinct rates in use, ascending.
  std::vector<double> prices() const;

  /// `days` consecutive days from `start` (a UTC midnight). Every day carries
  /// one event block of 3-12 hours at a random start hour, wrapping inside
  /// the day; the event type cycles High, Low, none by day index.
  static TariffSchedule random_events(Timestamp start, int days, std::uint64_t seed);

  /// The first `weeks` ISO weeks of 2017, 2018 and 2019 (all 52-week
  /// years). Day j of year y is priced at one level for all 24 hours, level
  /// (y + j) mod 3 of Default, High, Low, so every (weekday, ISO week, hour)
  /// cell is observed at every price.
  static TariffSchedule rotating(int weeks);
};

struct SyntheticFiles {
  std::string meter_csv;  // lcl tariff mode
  std::string weather_csv;
  std::string truth_json;
};

/// Covers the first `days` days of the schedule. Half-hourly consumption is
/// baseline * (1 + e(p, h) * respond) + sensitivity * (T - 15) + noise,
/// clamped at 0, with respond ~ Bernoulli(probability(p, h)) once per
/// consumer-hour. Hourly weather is a seeded sinusoid plus noise.
/// Throws std::invalid_argument when days is out of range, a spec is
/// invalid, ids repeat, or a scheduled price has no probability.
SyntheticFiles generate_population(const std::vector<SyntheticConsumerSpec>& specs, int days,
                                   const TariffSchedule& schedule, std::uint64_t seed);

/// `n` consumers with constant elasticities at the LCL High and Low rates
/// and probability 1 everywhere. Baselines differ per consumer.
std::vector<SyntheticConsumerSpec> literal_population(int n, double high_elasticity,
                                                      double low_elasticity,
                                                      std::string_view id_prefix = "S",
                                                      double noise_sd_kw = 0.0);

struct GroundTruth {
  SyntheticConsumerSpec spec;
  std::map<double, HourArray<double>> elasticity;  // evaluated at the scheduled prices
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Array of {consumer_id, baseline, elasticity{price: [24]},
/// elasticity_coefficients, reference_price, probability{price: [24]},
/// noise_sd, temperature_sensitivity, seed, stream}.
std::string truth_to_json(const std::vector<SyntheticConsumerSpec>& specs,
                          const std::vector<double>& prices, std::uint64_t seed);
std::vector<GroundTruth> truth_from_json(std::string_view text);

struct RecoveryReport {
  std::string consumer_id;
  std::size_t compared = 0;        // (non-default price, hour) estimates
  double elasticity_rmse = 0.0;
  double sign_agreement = 0.0;     // over compared entries with non-zero truth
  std::size_t intervals = 0;       // score entries checked for coverage
  std::optional<double> coverage;  // share of true probabilities inside the HPD interval
};

/// The true response probability of outcome i in hour h is
/// |e_i(h)| * prob_i(h) normalized over the score's outcomes; hours where
/// every share is 0 are skipped. Per-consumer scores are matched by
/// subject and their outcome labels through the profile; pooled scores
/// contribute one row per consumer. Throws DataError when any consumer is
/// absent from the truth.
std::vector<RecoveryReport> compare_truth(const std::vector<causal::ElasticityProfile>& profiles,
                                          const std::vector<scorer::ResponseScore>& scores,
                                          const std::vector<GroundTruth>& truth);

std::string recovery_to_json(const std::vector<RecoveryReport>& report);

}  // namespace drm::synth
