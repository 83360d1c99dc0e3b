#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace drm {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

/// Parses ISO-8601 `YYYY-MM-DDTHH:MM[:SS]` followed by `Z` or `±HH:MM`.
/// Throws std::invalid_argument on malformed input.
Timestamp parse_iso8601(std::string_view text);

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_iso8601(Timestamp ts);

enum class TariffMode { lcl, generic };

struct TariffLevel {
  std::string label;  // Default, High, Low, or a custom label
  double rate = 0.0;  // GBP per kWh, > 0
};

namespace lcl {
// Dynamic time-of-use rates of the 2013 London trial, GBP/kWh.
inline constexpr double kDefaultRate = 0.1176;
inline constexpr double kHighRate = 0.6720;
inline constexpr double kLowRate = 0.0390;

/// Default, High, Low in that order.
std::vector<TariffLevel> tariffs();

/// Rate for a Default/High/Low label; throws std::invalid_argument otherwise.
double rate_for_label(std::string_view label);

/// Label for one of the three rates, or empty if the rate is not an LCL level.
std::string label_for_rate(double rate);
}  // namespace lcl

struct MeterReading {
  std::string consumer_id;
  Timestamp timestamp = 0;
  double avg_power_kw = 0.0;
  double price = 0.0;
};

struct WeatherRecord {
  Timestamp timestamp = 0;
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double pressure_hpa = 0.0;
  double visibility_km = 0.0;
  double wind_direction_deg = 0.0;
  double wind_speed_kmh = 0.0;
  std::string condition;
};

struct HourlyReading {
  std::string consumer_id;
  Timestamp timestamp = 0;  // start of the hour
  double kw = 0.0;
  double price = 0.0;
};

/// One hourly observation with calendar and weather features.
/// day_of_week uses Monday = 0; week_of_year is the ISO week.
struct FeatureRow {
  std::string consumer_id;
  Timestamp timestamp = 0;
  int hour = 0;
  int day_of_week = 0;
  int week_of_year = 1;
  int month = 1;
  int minute = 0;
  double price = 0.0;
  double consumption_kw = 0.0;
  double temperature_c = 0.0;
  // Aggregated over the consumer's rows sharing this (hour-of-day, price).
  double temp_high = 0.0;
  double temp_low = 0.0;
  double temp_avg = 0.0;
  double humidity_pct = 0.0;
  double pressure_hpa = 0.0;
  double visibility_km = 0.0;
  double wind_direction_deg = 0.0;
  double wind_speed_kmh = 0.0;
  std::string condition;

  bool operator==(const FeatureRow&) const = default;
};

struct Dataset {
  std::vector<FeatureRow> rows;  // sorted by (consumer_id, timestamp)
  std::vector<TariffLevel> tariff_set;
  std::vector<std::string> consumer_ids;  // sorted, distinct
  std::size_t dropped_rows = 0;           // rows lost to weather staleness

  /// Rows of one consumer (contiguous because rows are sorted).
  std::vector<FeatureRow> rows_for(std::string_view consumer_id) const;

  /// Rate of the Default level, or the first tariff when none is labelled so.
  double default_price() const;
};

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr Timestamp kMaxWeatherStaleness = 3 * 3600;

/// Parses a meter file. In lcl mode the header is
/// `consumer_id,timestamp,avg_power_kw,tariff_label`; in generic mode the last
/// column is `price_gbp_per_kwh`. Errors name the line and column.
std::vector<MeterReading> parse_meter_csv(const std::string& path, TariffMode mode);
std::vector<MeterReading> parse_meter_text(std::string_view text, TariffMode mode,
                                           std::string_view source = "meter");

std::vector<WeatherRecord> parse_weather_csv(const std::string& path);
std::vector<WeatherRecord> parse_weather_text(std::string_view text,
                                              std::string_view source = "weather");

/// Averages the half-hour readings inside each clock hour. Input must be
/// sorted by (consumer_id, timestamp).
std::vector<HourlyReading> aggregate_hourly(const std::vector<MeterReading>& readings);

/// Joins weather (last observation at or before the hour, at most three hours
/// old), derives calendar fields and per (hour, price) temperature
/// aggregates. In lcl mode the tariff set is the three LCL levels; in generic
/// mode it is the set of distinct observed prices.
Dataset engineer_features(const std::vector<HourlyReading>& hourly,
                          const std::vector<WeatherRecord>& weather, TariffMode mode);

std::string dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(std::string_view json_text);

}  // namespace drm
