#include "drm/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

#include "drm/common.hpp"

namespace drm {

namespace {

using std::chrono::days;
using std::chrono::sys_days;

int parse_fixed_int(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) throw std::invalid_argument("truncated timestamp");
  int value = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    const char c = text[i];
    if (c < '0' || c > '9') throw std::invalid_argument("non-digit in timestamp");
    value = value * 10 + (c - '0');
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c)
    throw std::invalid_argument(std::string("expected '") + c + "' in timestamp");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

struct CsvLine {
  std::size_t number;
  std::vector<std::string_view> fields;
};

/// Splits text into header + data lines, skipping blank lines.
std::vector<CsvLine> read_lines(std::string_view text, std::string_view source,
                                std::string_view expected_header) {
  std::vector<CsvLine> lines;
  std::size_t pos = 0;
  std::size_t number = 0;
  bool header_seen = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    ++number;
    pos = end + 1;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!header_seen) {
      if (line != expected_header) {
        throw DataError(std::string(source) + ":" + std::to_string(number) +
                        ":1: unexpected header '" + std::string(line) + "', expected '" +
                        std::string(expected_header) + "'");
      }
      header_seen = true;
      continue;
    }
    lines.push_back({number, split_csv_line(line)});
    if (end == text.size()) break;
  }
  if (!header_seen) throw DataError(std::string(source) + ": missing header");
  return lines;
}

[[noreturn]] void fail_at(std::string_view source, std::size_t line, std::size_t column,
                          const std::string& what) {
  throw DataError(std::string(source) + ":" + std::to_string(line) + ":" +
                  std::to_string(column) + ": " + what);
}

double parse_number(std::string_view field, std::string_view source, std::size_t line,
                    std::size_t column) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(value))
    fail_at(source, line, column, "malformed number '" + std::string(field) + "'");
  return value;
}

Timestamp parse_timestamp_field(std::string_view field, std::string_view source,
                                std::size_t line, std::size_t column) {
  try {
    return parse_iso8601(field);
  } catch (const std::invalid_argument& e) {
    fail_at(source, line, column,
            "malformed timestamp '" + std::string(field) + "': " + e.what());
  }
}

void check_field_count(const CsvLine& l, std::size_t expected, std::string_view source) {
  if (l.fields.size() != expected) {
    fail_at(source, l.number, std::min(l.fields.size(), expected) + 1,
            "expected " + std::to_string(expected) + " fields, found " +
                std::to_string(l.fields.size()));
  }
}

struct CalendarFields {
  int hour, minute, day_of_week, week_of_year, month;
};

CalendarFields calendar_of(Timestamp ts) {
  const Timestamp day_index = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const Timestamp seconds = ts - day_index * 86400;
  const sys_days day{days{day_index}};
  const std::chrono::year_month_day ymd{day};
  const unsigned iso_wd = std::chrono::weekday{day}.iso_encoding();  // Mon=1..Sun=7
  const sys_days thursday = day + days{4 - static_cast<int>(iso_wd)};
  const std::chrono::year_month_day thursday_ymd{thursday};
  const sys_days jan1{thursday_ymd.year() / std::chrono::January / 1};
  const int week = static_cast<int>((thursday - jan1).count() / 7) + 1;
  return {static_cast<int>(seconds / 3600), static_cast<int>((seconds % 3600) / 60),
          static_cast<int>(iso_wd) - 1, week, static_cast<int>(unsigned(ymd.month()))};
}

}  // namespace

Timestamp parse_iso8601(std::string_view text) {
  text = trim(text);
  const int year = parse_fixed_int(text, 0, 4);
  expect_char(text, 4, '-');
  const int month = parse_fixed_int(text, 5, 2);
  expect_char(text, 7, '-');
  const int day = parse_fixed_int(text, 8, 2);
  if (text.size() <= 10 || (text[10] != 'T' && text[10] != ' '))
    throw std::invalid_argument("expected 'T' separator");
  const int hour = parse_fixed_int(text, 11, 2);
  expect_char(text, 13, ':');
  const int minute = parse_fixed_int(text, 14, 2);
  std::size_t pos = 16;
  int second = 0;
  if (pos < text.size() && text[pos] == ':') {
    second = parse_fixed_int(text, pos + 1, 2);
    pos += 3;
  }
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
  }
  if (pos >= text.size()) throw std::invalid_argument("missing UTC offset");
  int offset_seconds = 0;
  if (text[pos] == 'Z') {
    ++pos;
  } else if (text[pos] == '+' || text[pos] == '-') {
    const int sign = text[pos] == '+' ? 1 : -1;
    const int oh = parse_fixed_int(text, pos + 1, 2);
    expect_char(text, pos + 3, ':');
    const int om = parse_fixed_int(text, pos + 4, 2);
    if (oh > 23 || om > 59) throw std::invalid_argument("offset out of range");
    offset_seconds = sign * (oh * 3600 + om * 60);
    pos += 6;
  } else {
    throw std::invalid_argument("missing UTC offset");
  }
  if (pos != text.size()) throw std::invalid_argument("trailing characters");

  const std::chrono::year_month_day ymd{std::chrono::year{year},
                                        std::chrono::month{static_cast<unsigned>(month)},
                                        std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
  if (hour > 23 || minute > 59 || second > 60) throw std::invalid_argument("invalid time");
  const Timestamp days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return days_since_epoch * 86400 + hour * 3600 + minute * 60 + second - offset_seconds;
}

std::string format_iso8601(Timestamp ts) {
  const Timestamp day_index = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const Timestamp seconds = ts - day_index * 86400;
  const std::chrono::year_month_day ymd{sys_days{days{day_index}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), int(seconds / 3600),
                int((seconds % 3600) / 60), int(seconds % 60));
  return buf;
}

namespace lcl {

std::vector<TariffLevel> tariffs() {
  return {{"Default", kDefaultRate}, {"High", kHighRate}, {"Low", kLowRate}};
}

double rate_for_label(std::string_view label) {
  if (label == "Default") return kDefaultRate;
  if (label == "High") return kHighRate;
  if (label == "Low") return kLowRate;
  throw std::invalid_argument("unknown tariff label '" + std::string(label) + "'");
}

std::string label_for_rate(double rate) {
  if (rate == kDefaultRate) return "Default";
  if (rate == kHighRate) return "High";
  if (rate == kLowRate) return "Low";
  return {};
}

}  // namespace lcl

std::vector<FeatureRow> Dataset::rows_for(std::string_view consumer_id) const {
  const auto lo = std::lower_bound(
      rows.begin(), rows.end(), consumer_id,
      [](const FeatureRow& r, std::string_view id) { return r.consumer_id < id; });
  auto hi = lo;
  while (hi != rows.end() && hi->consumer_id == consumer_id) ++hi;
  return {lo, hi};
}

double Dataset::default_price() const {
  for (const auto& t : tariff_set)
    if (t.label == "Default") return t.rate;
  if (tariff_set.empty()) throw DataError("dataset has an empty tariff set");
  return tariff_set.front().rate;
}

std::vector<MeterReading> parse_meter_text(std::string_view text, TariffMode mode,
                                           std::string_view source) {
  const std::string_view header = mode == TariffMode::lcl
                                      ? "consumer_id,timestamp,avg_power_kw,tariff_label"
                                      : "consumer_id,timestamp,avg_power_kw,price_gbp_per_kwh";
  const auto lines = read_lines(text, source, header);
  std::vector<MeterReading> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    check_field_count(l, 4, source);
    MeterReading r;
    r.consumer_id = std::string(l.fields[0]);
    if (r.consumer_id.empty()) fail_at(source, l.number, 1, "empty consumer_id");
    r.timestamp = parse_timestamp_field(l.fields[1], source, l.number, 2);
    r.avg_power_kw = parse_number(l.fields[2], source, l.number, 3);
    if (r.avg_power_kw < 0.0) fail_at(source, l.number, 3, "negative avg_power_kw");
    if (mode == TariffMode::lcl) {
      try {
        r.price = lcl::rate_for_label(l.fields[3]);
      } catch (const std::invalid_argument& e) {
        fail_at(source, l.number, 4, e.what());
      }
    } else {
      r.price = parse_number(l.fields[3], source, l.number, 4);
      if (r.price <= 0.0) fail_at(source, l.number, 4, "price must be positive");
    }
    out.push_back(std::move(r));
  }
  std::stable_sort(out.begin(), out.end(), [](const MeterReading& a, const MeterReading& b) {
    return std::tie(a.consumer_id, a.timestamp) < std::tie(b.consumer_id, b.timestamp);
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].consumer_id == out[i - 1].consumer_id &&
        out[i].timestamp == out[i - 1].timestamp) {
      throw DataError(std::string(source) + ": duplicate reading for " + out[i].consumer_id +
                      " at " + format_iso8601(out[i].timestamp));
    }
  }
  return out;
}

std::vector<MeterReading> parse_meter_csv(const std::string& path, TariffMode mode) {
  return parse_meter_text(read_file(path), mode, path);
}

std::vector<WeatherRecord> parse_weather_text(std::string_view text, std::string_view source) {
  const auto lines = read_lines(
      text, source,
      "timestamp,temp_c,humidity_pct,pressure_hpa,visibility_km,wind_dir_deg,wind_speed_kmh,"
      "condition");
  std::vector<WeatherRecord> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    check_field_count(l, 8, source);
    WeatherRecord w;
    w.timestamp = parse_timestamp_field(l.fields[0], source, l.number, 1);
    w.temperature_c = parse_number(l.fields[1], source, l.number, 2);
    w.humidity_pct = parse_number(l.fields[2], source, l.number, 3);
    if (w.humidity_pct < 0.0 || w.humidity_pct > 100.0)
      fail_at(source, l.number, 3, "humidity outside [0, 100]");
    w.pressure_hpa = parse_number(l.fields[3], source, l.number, 4);
    w.visibility_km = parse_number(l.fields[4], source, l.number, 5);
    w.wind_direction_deg = parse_number(l.fields[5], source, l.number, 6);
    w.wind_speed_kmh = parse_number(l.fields[6], source, l.number, 7);
    w.condition = std::string(l.fields[7]);
    out.push_back(std::move(w));
  }
  std::stable_sort(out.begin(), out.end(), [](const WeatherRecord& a, const WeatherRecord& b) {
    return a.timestamp < b.timestamp;
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].timestamp == out[i - 1].timestamp)
      throw DataError(std::string(source) + ": duplicate weather timestamp " +
                      format_iso8601(out[i].timestamp));
  }
  return out;
}

std::vector<WeatherRecord> parse_weather_csv(const std::string& path) {
  return parse_weather_text(read_file(path), path);
}

std::vector<HourlyReading> aggregate_hourly(const std::vector<MeterReading>& readings) {
  std::vector<HourlyReading> out;
  std::size_t i = 0;
  while (i < readings.size()) {
    const auto& first = readings[i];
    const Timestamp hour_start = first.timestamp - ((first.timestamp % 3600) + 3600) % 3600;
    double sum = 0.0;
    std::size_t n = 0;
    std::size_t j = i;
    for (; j < readings.size() && readings[j].consumer_id == first.consumer_id &&
           readings[j].timestamp < hour_start + 3600;
         ++j) {
      if (readings[j].price != first.price) {
        throw DataError("ambiguous price for " + first.consumer_id + " in hour " +
                        format_iso8601(hour_start) + ": " + format_double(first.price) +
                        " vs " + format_double(readings[j].price));
      }
      sum += readings[j].avg_power_kw;
      ++n;
    }
    if (n > 2) {
      throw DataError("more than two half-hour readings for " + first.consumer_id +
                      " in hour " + format_iso8601(hour_start));
    }
    out.push_back({first.consumer_id, hour_start, sum / static_cast<double>(n), first.price});
    i = j;
  }
  return out;
}

Dataset engineer_features(const std::vector<HourlyReading>& hourly,
                          const std::vector<WeatherRecord>& weather, TariffMode mode) {
  Dataset ds;
  std::set<double> prices;
  std::set<std::string> ids;
  ds.rows.reserve(hourly.size());
  for (const auto& h : hourly) {
    const auto it = std::upper_bound(
        weather.begin(), weather.end(), h.timestamp,
        [](Timestamp t, const WeatherRecord& w) { return t < w.timestamp; });
    if (it == weather.begin() || h.timestamp - std::prev(it)->timestamp > kMaxWeatherStaleness) {
      ++ds.dropped_rows;
      continue;
    }
    const WeatherRecord& w = *std::prev(it);
    const CalendarFields cal = calendar_of(h.timestamp);
    FeatureRow row;
    row.consumer_id = h.consumer_id;
    row.timestamp = h.timestamp;
    row.hour = cal.hour;
    row.minute = cal.minute;
    row.day_of_week = cal.day_of_week;
    row.week_of_year = cal.week_of_year;
    row.month = cal.month;
    row.price = h.price;
    row.consumption_kw = h.kw;
    row.temperature_c = w.temperature_c;
    row.humidity_pct = w.humidity_pct;
    row.pressure_hpa = w.pressure_hpa;
    row.visibility_km = w.visibility_km;
    row.wind_direction_deg = w.wind_direction_deg;
    row.wind_speed_kmh = w.wind_speed_kmh;
    row.condition = w.condition;
    prices.insert(h.price);
    ids.insert(h.consumer_id);
    ds.rows.push_back(std::move(row));
  }
  if (!hourly.empty() && 2 * ds.dropped_rows > hourly.size()) {
    throw DataError(std::to_string(ds.dropped_rows) + " of " + std::to_string(hourly.size()) +
                    " hourly rows have no weather within 3 h; inputs look misaligned");
  }

  struct Agg {
    double hi = -INFINITY, lo = INFINITY, sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::tuple<std::string, int, double>, Agg> agg;
  for (const auto& r : ds.rows) {
    auto& a = agg[{r.consumer_id, r.hour, r.price}];
    a.hi = std::max(a.hi, r.temperature_c);
    a.lo = std::min(a.lo, r.temperature_c);
    a.sum += r.temperature_c;
    ++a.n;
  }
  for (auto& r : ds.rows) {
    const auto& a = agg.at({r.consumer_id, r.hour, r.price});
    r.temp_high = a.hi;
    r.temp_low = a.lo;
    r.temp_avg = std::clamp(a.sum / static_cast<double>(a.n), a.lo, a.hi);
  }

  if (mode == TariffMode::lcl) {
    ds.tariff_set = lcl::tariffs();
  } else {
    for (double p : prices) {
      std::string label = lcl::label_for_rate(p);
      if (label.empty()) label = "Custom:" + format_double(p);
      ds.tariff_set.push_back({label, p});
    }
  }
  ds.consumer_ids.assign(ids.begin(), ids.end());
  return ds;
}

std::string dataset_to_json(const Dataset& dataset) {
  using nlohmann::json;
  json tariffs = json::array();
  for (const auto& t : dataset.tariff_set) tariffs.push_back({{"label", t.label}, {"rate", t.rate}});

  json cols = json::object();
  auto column = [&](const char* name, auto getter) {
    json arr = json::array();
    for (const auto& r : dataset.rows) arr.push_back(getter(r));
    cols[name] = std::move(arr);
  };
  column("consumer_id", [](const FeatureRow& r) { return r.consumer_id; });
  column("timestamp", [](const FeatureRow& r) { return r.timestamp; });
  column("hour", [](const FeatureRow& r) { return r.hour; });
  column("day_of_week", [](const FeatureRow& r) { return r.day_of_week; });
  column("week_of_year", [](const FeatureRow& r) { return r.week_of_year; });
  column("month", [](const FeatureRow& r) { return r.month; });
  column("minute", [](const FeatureRow& r) { return r.minute; });
  column("price", [](const FeatureRow& r) { return r.price; });
  column("consumption_kw", [](const FeatureRow& r) { return r.consumption_kw; });
  column("temperature_c", [](const FeatureRow& r) { return r.temperature_c; });
  column("temp_high", [](const FeatureRow& r) { return r.temp_high; });
  column("temp_low", [](const FeatureRow& r) { return r.temp_low; });
  column("temp_avg", [](const FeatureRow& r) { return r.temp_avg; });
  column("humidity_pct", [](const FeatureRow& r) { return r.humidity_pct; });
  column("pressure_hpa", [](const FeatureRow& r) { return r.pressure_hpa; });
  column("visibility_km", [](const FeatureRow& r) { return r.visibility_km; });
  column("wind_direction_deg", [](const FeatureRow& r) { return r.wind_direction_deg; });
  column("wind_speed_kmh", [](const FeatureRow& r) { return r.wind_speed_kmh; });
  column("condition", [](const FeatureRow& r) { return r.condition; });

  json doc = {{"schema_version", kDatasetSchemaVersion},
              {"tariff_set", std::move(tariffs)},
              {"consumer_ids", dataset.consumer_ids},
              {"dropped_rows", dataset.dropped_rows},
              {"row_count", dataset.rows.size()},
              {"columns", std::move(cols)}};
  return doc.dump() + "\n";
}

Dataset dataset_from_json(std::string_view json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw DataError("dataset JSON: unsupported schema_version");
    Dataset ds;
    for (const auto& t : doc.at("tariff_set"))
      ds.tariff_set.push_back({t.at("label").get<std::string>(), t.at("rate").get<double>()});
    ds.consumer_ids = doc.at("consumer_ids").get<std::vector<std::string>>();
    ds.dropped_rows = doc.at("dropped_rows").get<std::size_t>();
    const std::size_t n = doc.at("row_count").get<std::size_t>();
    const json& cols = doc.at("columns");
    ds.rows.resize(n);
    auto column = [&](const char* name, auto setter) {
      const json& arr = cols.at(name);
      if (arr.size() != n) throw DataError(std::string("dataset JSON: column ") + name +
                                           " has wrong length");
      for (std::size_t i = 0; i < n; ++i) setter(ds.rows[i], arr[i]);
    };
    column("consumer_id", [](FeatureRow& r, const json& v) { r.consumer_id = v.get<std::string>(); });
    column("timestamp", [](FeatureRow& r, const json& v) { r.timestamp = v.get<Timestamp>(); });
    column("hour", [](FeatureRow& r, const json& v) { r.hour = v.get<int>(); });
    column("day_of_week", [](FeatureRow& r, const json& v) { r.day_of_week = v.get<int>(); });
    column("week_of_year", [](FeatureRow& r, const json& v) { r.week_of_year = v.get<int>(); });
    column("month", [](FeatureRow& r, const json& v) { r.month = v.get<int>(); });
    column("minute", [](FeatureRow& r, const json& v) { r.minute = v.get<int>(); });
    column("price", [](FeatureRow& r, const json& v) { r.price = v.get<double>(); });
    column("consumption_kw", [](FeatureRow& r, const json& v) { r.consumption_kw = v.get<double>(); });
    column("temperature_c", [](FeatureRow& r, const json& v) { r.temperature_c = v.get<double>(); });
    column("temp_high", [](FeatureRow& r, const json& v) { r.temp_high = v.get<double>(); });
    column("temp_low", [](FeatureRow& r, const json& v) { r.temp_low = v.get<double>(); });
    column("temp_avg", [](FeatureRow& r, const json& v) { r.temp_avg = v.get<double>(); });
    column("humidity_pct", [](FeatureRow& r, const json& v) { r.humidity_pct = v.get<double>(); });
    column("pressure_hpa", [](FeatureRow& r, const json& v) { r.pressure_hpa = v.get<double>(); });
    column("visibility_km", [](FeatureRow& r, const json& v) { r.visibility_km = v.get<double>(); });
    column("wind_direction_deg",
           [](FeatureRow& r, const json& v) { r.wind_direction_deg = v.get<double>(); });
    column("wind_speed_kmh", [](FeatureRow& r, const json& v) { r.wind_speed_kmh = v.get<double>(); });
    column("condition", [](FeatureRow& r, const json& v) { r.condition = v.get<std::string>(); });
    return ds;
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset JSON: ") + e.what());
  }
}

}  // namespace drm
