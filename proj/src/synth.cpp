#include "drm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "drm/common.hpp"
#include "drm/rng.hpp"

namespace drm::synth {

namespace {

using nlohmann::json;

constexpr std::uint64_t kWeatherStream = 2;
constexpr std::uint64_t kConsumerStreamBase = 1000;
constexpr double kZeroTolerance = 1e-12;

int sign_of(double x) { return x > kZeroTolerance ? 1 : (x < -kZeroTolerance ? -1 : 0); }

json hour_array(const HourArray<double>& a) { return json(std::vector<double>(a.begin(), a.end())); }

HourArray<double> hour_array_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(kHours))
    throw DataError(std::string("truth JSON: ") + what + " must hold 24 values");
  HourArray<double> out{};
  for (int h = 0; h < kHours; ++h) out[static_cast<std::size_t>(h)] = j[static_cast<std::size_t>(h)].get<double>();
  return out;
}

json price_map(const std::map<double, HourArray<double>>& m) {
  json out = json::object();
  for (const auto& [price, values] : m) out[format_double(price)] = hour_array(values);
  return out;
}

std::map<double, HourArray<double>> price_map_from(const json& j, const char* what) {
  if (!j.is_object()) throw DataError(std::string("truth JSON: ") + what + " must be an object");
  std::map<double, HourArray<double>> out;
  for (const auto& [key, values] : j.items()) {
    double price = 0.0;
    try {
      price = std::stod(key);
    } catch (const std::exception&) {
      throw DataError(std::string("truth JSON: bad price key '") + key + "' in " + what);
    }
    out[price] = hour_array_from(values, what);
  }
  return out;
}

struct WeatherHour {
  double temperature_c;
  std::string line;
};

std::vector<WeatherHour> make_weather(const TariffSchedule& schedule, int days, std::uint64_t seed) {
  Philox4x32 rng(seed, kWeatherStream);
  std::normal_distribution<double> normal;
  static constexpr const char* kConditions[] = {"Clear", "Partly Cloudy", "Overcast", "Light Rain"};
  std::vector<WeatherHour> out;
  out.reserve(static_cast<std::size_t>(days) * kHours);
  for (int d = 0; d < days; ++d) {
    const Timestamp day = schedule.day_starts[static_cast<std::size_t>(d)];
    const double day_of_year = std::fmod(static_cast<double>(day) / 86400.0, 365.25);
    for (int h = 0; h < kHours; ++h) {
      const double seasonal = 7.0 * std::sin(2.0 * std::numbers::pi * (day_of_year - 110.0) / 365.25);
      const double diurnal = 4.0 * std::sin(2.0 * std::numbers::pi * (h - 9.0) / 24.0);
      const double temp = std::round((11.0 + seasonal + diurnal + normal(rng)) * 100.0) / 100.0;
      const double humidity = std::clamp(std::round(75.0 - 2.0 * diurnal + 8.0 * normal(rng)), 20.0, 100.0);
      const double pressure = std::round((1013.0 + 6.0 * normal(rng)) * 10.0) / 10.0;
      const double visibility = std::round(std::clamp(10.0 + 3.0 * normal(rng), 0.5, 40.0) * 10.0) / 10.0;
      const double wind_dir = std::floor(rng.uniform() * 360.0);
      const double wind_speed = std::round(std::abs(12.0 + 5.0 * normal(rng)) * 10.0) / 10.0;
      const char* condition = kConditions[static_cast<std::size_t>(rng.uniform() * 4.0)];
      const Timestamp ts = day + h * 3600;
      out.push_back({temp, format_iso8601(ts) + "," + format_double(temp) + "," +
                               format_double(humidity) + "," + format_double(pressure) + "," +
                               format_double(visibility) + "," + format_double(wind_dir) + "," +
                               format_double(wind_speed) + "," + condition + "\n"});
    }
  }
  return out;
}

}  // namespace

void SyntheticConsumerSpec::validate() const {
  if (consumer_id.empty()) throw std::invalid_argument("synthetic consumer needs an id");
  for (double b : baseline_kw)
    if (!(b >= 0.0)) throw std::invalid_argument(consumer_id + ": baseline must be >= 0");
  if (!(reference_price > 0.0))
    throw std::invalid_argument(consumer_id + ": reference price must be positive");
  for (const auto& [price, probs] : probability)
    for (double p : probs)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument(consumer_id + ": probability at " + format_double(price) +
                                    " outside [0, 1]");
  if (!(noise_sd_kw >= 0.0)) throw std::invalid_argument(consumer_id + ": noise sd must be >= 0");
}

double SyntheticConsumerSpec::elasticity_at(double price, int hour) const {
  const auto& a = elasticity.at(static_cast<std::size_t>(hour));
  const double d = price - reference_price;
  return d * (a[0] + d * (a[1] + d * a[2]));
}

double SyntheticConsumerSpec::probability_at(double price, int hour) const {
  const auto it = probability.find(price);
  if (it != probability.end()) return it->second.at(static_cast<std::size_t>(hour));
  if (price == reference_price) return 0.0;
  throw std::out_of_range(consumer_id + ": no response probability at " + format_double(price));
}

CubicCoefficients fit_elasticity(double reference_price,
                                 const std::vector<std::pair<double, double>>& points) {
  const std::size_t m = points.size();
  if (m == 0 || m > 3) throw std::invalid_argument("fit_elasticity takes one to three points");
  Eigen::MatrixXd v(m, m);
  Eigen::VectorXd e(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double d = points[i].first - reference_price;
    if (d == 0.0) throw std::invalid_argument("fit_elasticity: point at the reference price");
    for (std::size_t j = 0; j < i; ++j)
      if (points[j].first == points[i].first)
        throw std::invalid_argument("fit_elasticity: repeated price");
    double power = d;
    for (std::size_t k = 0; k < m; ++k, power *= d) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = power;
    e(static_cast<Eigen::Index>(i)) = points[i].second;
  }
  const Eigen::VectorXd a = v.colPivHouseholderQr().solve(e);
  CubicCoefficients out{};
  for (std::size_t k = 0; k < m; ++k) out[k] = a(static_cast<Eigen::Index>(k));
  return out;
}

std::vector<double> TariffSchedule::prices() const {
  std::set<double> seen;
  for (const auto& day : labels)
    for (const auto& label : day) seen.insert(lcl::rate_for_label(label));
  return {seen.begin(), seen.end()};
}

TariffSchedule TariffSchedule::random_events(Timestamp start, int days, std::uint64_t seed) {
  if (days < 1) throw std::invalid_argument("schedule needs at least one day");
  if (start % 86400 != 0) throw std::invalid_argument("schedule must start at a UTC midnight");
  Philox4x32 rng(seed, kWeatherStream + 1);
  TariffSchedule s;
  for (int d = 0; d < days; ++d) {
    HourArray<std::string> day;
    day.fill("Default");
    const int length = 3 + static_cast<int>(rng.uniform() * 10.0);  // 3..12
    const int first = static_cast<int>(rng.uniform() * kHours);
    static constexpr const char* kCycle[] = {"High", "Low", nullptr};
    if (const char* event = kCycle[d % 3])
      for (int k = 0; k < length; ++k) day[static_cast<std::size_t>((first + k) % kHours)] = event;
    s.day_starts.push_back(start + static_cast<Timestamp>(d) * 86400);
    s.labels.push_back(std::move(day));
  }
  return s;
}

TariffSchedule TariffSchedule::rotating(int weeks) {
  if (weeks < 1 || weeks > 52) throw std::invalid_argument("rotating schedule takes 1-52 weeks");
  static constexpr const char* kLevels[] = {"Default", "High", "Low"};
  const Timestamp year_starts[] = {parse_iso8601("2017-01-02T00:00Z"),
                                   parse_iso8601("2018-01-01T00:00Z"),
                                   parse_iso8601("2018-12-31T00:00Z")};
  TariffSchedule s;
  for (int y = 0; y < 3; ++y) {
    for (int j = 0; j < 7 * weeks; ++j) {
      HourArray<std::string> day;
      day.fill(kLevels[(y + j) % 3]);
      s.day_starts.push_back(year_starts[y] + static_cast<Timestamp>(j) * 86400);
      s.labels.push_back(std::move(day));
    }
  }
  return s;
}

SyntheticFiles generate_population(const std::vector<SyntheticConsumerSpec>& specs, int days,
                                   const TariffSchedule& schedule, std::uint64_t seed) {
  if (days < 1 || static_cast<std::size_t>(days) > schedule.days())
    throw std::invalid_argument("days must be in [1, " + std::to_string(schedule.days()) + "]");
  if (schedule.labels.size() != schedule.day_starts.size())
    throw std::invalid_argument("schedule labels and days disagree");
  std::set<std::string> ids;
  for (const auto& s : specs) {
    s.validate();
    if (!ids.insert(s.consumer_id).second)
      throw std::invalid_argument("duplicate synthetic consumer " + s.consumer_id);
  }

  TariffSchedule used;
  used.day_starts.assign(schedule.day_starts.begin(), schedule.day_starts.begin() + days);
  used.labels.assign(schedule.labels.begin(), schedule.labels.begin() + days);
  const std::vector<double> prices = used.prices();
  for (const auto& s : specs)
    for (double p : prices)
      for (int h = 0; h < kHours; ++h) (void)s.probability_at(p, h);  // throws if missing

  const auto weather = make_weather(used, days, seed);

  std::vector<std::string> chunks(specs.size());
  parallel_for(specs.size(), [&](std::size_t i) {
    const auto& spec = specs[i];
    Philox4x32 rng(seed, kConsumerStreamBase + i);
    std::normal_distribution<double> normal;
    std::string& out = chunks[i];
    for (int d = 0; d < days; ++d) {
      for (int h = 0; h < kHours; ++h) {
        const std::string& label = used.labels[static_cast<std::size_t>(d)][static_cast<std::size_t>(h)];
        const double price = lcl::rate_for_label(label);
        const bool respond = rng.uniform() < spec.probability_at(price, h);
        const double temp = weather[static_cast<std::size_t>(d * kHours + h)].temperature_c;
        const double mean = spec.baseline_kw[static_cast<std::size_t>(h)] *
                                (1.0 + (respond ? spec.elasticity_at(price, h) : 0.0)) +
                            spec.temperature_sensitivity * (temp - 15.0);
        const Timestamp hour_start = used.day_starts[static_cast<std::size_t>(d)] + h * 3600;
        for (int half = 0; half < 2; ++half) {
          const double noise = normal(rng);
          const double kw = std::max(0.0, mean + spec.noise_sd_kw * noise);
          out += spec.consumer_id + "," + format_iso8601(hour_start + half * 1800) + "," +
                 format_double(kw) + "," + label + "\n";
        }
      }
    }
  });

  SyntheticFiles files;
  files.meter_csv = "consumer_id,timestamp,avg_power_kw,tariff_label\n";
  for (const auto& c : chunks) files.meter_csv += c;
  files.weather_csv =
      "timestamp,temp_c,humidity_pct,pressure_hpa,visibility_km,wind_dir_deg,wind_speed_kmh,"
      "condition\n";
  for (const auto& w : weather) files.weather_csv += w.line;
  files.truth_json = truth_to_json(specs, prices, seed);
  return files;
}

std::vector<SyntheticConsumerSpec> literal_population(int n, double high_elasticity,
                                                      double low_elasticity,
                                                      std::string_view id_prefix,
                                                      double noise_sd_kw) {
  if (n < 0) throw std::invalid_argument("population size must be >= 0");
  const auto coef = fit_elasticity(lcl::kDefaultRate,
                                   {{lcl::kHighRate, high_elasticity}, {lcl::kLowRate, low_elasticity}});
  HourArray<double> ones{};
  ones.fill(1.0);
  std::vector<SyntheticConsumerSpec> out;
  for (int i = 0; i < n; ++i) {
    SyntheticConsumerSpec s;
    char id[32];
    std::snprintf(id, sizeof id, "%03d", i + 1);
    s.consumer_id = std::string(id_prefix) + id;
    for (int h = 0; h < kHours; ++h) {
      const double evening = std::exp(-0.5 * std::pow((h - 19.0) / 2.5, 2));
      const double morning = std::exp(-0.5 * std::pow((h - 8.0) / 1.5, 2));
      s.baseline_kw[static_cast<std::size_t>(h)] =
          0.25 + 0.02 * i + (0.6 + 0.05 * i) * evening + 0.3 * morning;
    }
    s.elasticity.fill(coef);
    s.probability[lcl::kHighRate] = ones;
    s.probability[lcl::kLowRate] = ones;
    s.noise_sd_kw = noise_sd_kw;
    out.push_back(std::move(s));
  }
  return out;
}

std::string truth_to_json(const std::vector<SyntheticConsumerSpec>& specs,
                          const std::vector<double>& prices, std::uint64_t seed) {
  json out = json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    std::map<double, HourArray<double>> elasticity, probability;
    for (double p : prices) {
      for (int h = 0; h < kHours; ++h) {
        elasticity[p][static_cast<std::size_t>(h)] = s.elasticity_at(p, h);
        probability[p][static_cast<std::size_t>(h)] = s.probability_at(p, h);
      }
    }
    json coef = json::array();
    for (const auto& a : s.elasticity) coef.push_back({a[0], a[1], a[2]});
    out.push_back({{"consumer_id", s.consumer_id},
                   {"baseline", hour_array(s.baseline_kw)},
                   {"elasticity", price_map(elasticity)},
                   {"elasticity_coefficients", coef},
                   {"reference_price", s.reference_price},
                   {"probability", price_map(probability)},
                   {"noise_sd", s.noise_sd_kw},
                   {"temperature_sensitivity", s.temperature_sensitivity},
                   {"seed", seed},
                   {"stream", kConsumerStreamBase + i}});
  }
  return out.dump(2) + "\n";
}

std::vector<GroundTruth> truth_from_json(std::string_view text) {
  std::vector<GroundTruth> out;
  try {
    const json doc = json::parse(text);
    if (!doc.is_array()) throw DataError("truth JSON must be an array");
    for (const auto& c : doc) {
      GroundTruth t;
      t.spec.consumer_id = c.at("consumer_id").get<std::string>();
      t.spec.baseline_kw = hour_array_from(c.at("baseline"), "baseline");
      t.spec.reference_price = c.at("reference_price").get<double>();
      const auto& coef = c.at("elasticity_coefficients");
      if (!coef.is_array() || coef.size() != static_cast<std::size_t>(kHours))
        throw DataError("truth JSON: elasticity_coefficients must hold 24 triples");
      for (std::size_t h = 0; h < coef.size(); ++h)
        t.spec.elasticity[h] = coef[h].get<CubicCoefficients>();
      t.spec.probability = price_map_from(c.at("probability"), "probability");
      t.spec.noise_sd_kw = c.at("noise_sd").get<double>();
      t.spec.temperature_sensitivity = c.value("temperature_sensitivity", 0.0);
      t.elasticity = price_map_from(c.at("elasticity"), "elasticity");
      t.seed = c.at("seed").get<std::uint64_t>();
      t.stream = c.value("stream", std::uint64_t{0});
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("truth JSON: ") + e.what());
  }
  return out;
}

std::vector<RecoveryReport> compare_truth(const std::vector<causal::ElasticityProfile>& profiles,
                                          const std::vector<scorer::ResponseScore>& scores,
                                          const std::vector<GroundTruth>& truth) {
  std::unordered_map<std::string, const SyntheticConsumerSpec*> by_id;
  for (const auto& t : truth) by_id[t.spec.consumer_id] = &t.spec;
  auto spec_for = [&](const std::string& id) -> const SyntheticConsumerSpec& {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("consumer " + id + " is not in the ground truth");
    return *it->second;
  };

  std::vector<RecoveryReport> reports;
  std::unordered_map<std::string, std::size_t> slot;
  struct Tally {
    double sq = 0.0;
    std::size_t signed_total = 0, agree = 0, covered = 0;
  };
  std::vector<Tally> tallies;
  auto report_for = [&](const std::string& id) -> std::size_t {
    spec_for(id);
    const auto [it, fresh] = slot.emplace(id, reports.size());
    if (fresh) {
      reports.push_back({});
      reports.back().consumer_id = id;
      tallies.emplace_back();
    }
    return it->second;
  };
  std::unordered_map<std::string, const causal::ElasticityProfile*> profile_by_id;

  for (const auto& profile : profiles) {
    const auto& spec = spec_for(profile.consumer_id);
    const std::size_t r = report_for(profile.consumer_id);
    profile_by_id[profile.consumer_id] = &profile;
    for (std::size_t i = 1; i < profile.prices.size(); ++i) {
      for (int h = 0; h < kHours; ++h) {
        const auto& est = profile.elasticity[i][static_cast<std::size_t>(h)];
        if (!est) continue;
        const double actual = spec.elasticity_at(profile.prices[i], h);
        tallies[r].sq += (*est - actual) * (*est - actual);
        ++reports[r].compared;
        if (sign_of(actual) != 0) {
          ++tallies[r].signed_total;
          if (sign_of(*est) == sign_of(actual)) ++tallies[r].agree;
        }
      }
    }
  }

  auto check_hour = [&](const scorer::ResponseScore& score, int h,
                        const std::vector<double>& shares, const std::vector<std::size_t>& owner) {
    double total = 0.0;
    for (double s : shares) total += s;
    if (total <= kZeroTolerance || score.no_data[static_cast<std::size_t>(h)]) return;
    for (std::size_t i = 0; i < shares.size(); ++i) {
      const double p = shares[i] / total;
      const auto row = static_cast<Eigen::Index>(i);
      ++reports[owner[i]].intervals;
      if (p >= score.hpd5(row, h) - kZeroTolerance && p <= score.hpd95(row, h) + kZeroTolerance)
        ++tallies[owner[i]].covered;
    }
  };

  for (const auto& score : scores) {
    const std::size_t k = score.k();
    std::vector<const SyntheticConsumerSpec*> specs(k);
    std::vector<double> prices(k);
    std::vector<std::size_t> owner(k);
    if (score.mode == scorer::Mode::pooled) {
      if (!score.price) throw DataError("pooled score has no price");
      for (std::size_t i = 0; i < k; ++i) {
        const auto& label = score.outcomes[i];
        const std::string id = label.substr(0, label.rfind('@'));
        specs[i] = &spec_for(id);
        prices[i] = *score.price;
        owner[i] = report_for(id);
      }
    } else {
      const auto& spec = spec_for(score.subject);
      const std::size_t r = report_for(score.subject);
      const auto pit = profile_by_id.find(score.subject);
      for (std::size_t i = 0; i < k; ++i) {
        specs[i] = &spec;
        owner[i] = r;
        const auto& label = score.outcomes[i];
        bool found = false;
        if (pit != profile_by_id.end()) {
          const auto& pr = *pit->second;
          for (std::size_t j = 0; j < pr.labels.size() && !found; ++j)
            if (pr.labels[j] == label) {
              prices[i] = pr.prices[j];
              found = true;
            }
        }
        if (!found) {
          if (label.rfind("Custom:", 0) == 0)
            prices[i] = std::stod(label.substr(7));
          else
            prices[i] = lcl::rate_for_label(label);
        }
      }
    }
    for (int h = 0; h < kHours; ++h) {
      std::vector<double> shares(k);
      for (std::size_t i = 0; i < k; ++i)
        shares[i] = std::abs(specs[i]->elasticity_at(prices[i], h)) *
                    (prices[i] == specs[i]->reference_price ? 0.0 : specs[i]->probability_at(prices[i], h));
      check_hour(score, h, shares, owner);
    }
  }

  for (std::size_t r = 0; r < reports.size(); ++r) {
    auto& rep = reports[r];
    const auto& t = tallies[r];
    if (rep.compared > 0) rep.elasticity_rmse = std::sqrt(t.sq / static_cast<double>(rep.compared));
    rep.sign_agreement =
        t.signed_total > 0 ? static_cast<double>(t.agree) / static_cast<double>(t.signed_total) : 1.0;
    if (rep.intervals > 0)
      rep.coverage = static_cast<double>(t.covered) / static_cast<double>(rep.intervals);
  }
  return reports;
}

std::string recovery_to_json(const std::vector<RecoveryReport>& report) {
  json out = json::array();
  for (const auto& r : report) {
    json j{{"consumer_id", r.consumer_id},
           {"compared", r.compared},
           {"elasticity_rmse", r.elasticity_rmse},
           {"sign_agreement", r.sign_agreement},
           {"intervals", r.intervals}};
    j["coverage"] = r.coverage ? json(*r.coverage) : json(nullptr);
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

}  // namespace drm::synth
