#include "drm/causal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "drm/common.hpp"
#include "drm/diagnostics.hpp"

namespace drm::causal {

KernelRegressor::KernelRegressor(Eigen::MatrixXd covariates, Eigen::VectorXd y,
                                 std::optional<double> bandwidth)
    : z_(std::move(covariates)), y_(std::move(y)) {
  const Eigen::Index n = z_.rows();
  const Eigen::Index d = z_.cols();
  if (static_cast<std::size_t>(n) < kMinPoints)
    throw std::invalid_argument("kernel regression needs at least 5 data points");
  if (y_.size() != n) throw std::invalid_argument("covariate and response lengths differ");

  mean_ = z_.colwise().mean().transpose();
  scale_.resize(d);
  bandwidth_.resize(d);
  active_.assign(static_cast<std::size_t>(d), true);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (z_.col(j).array() - mean_[j]).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      scale_[j] = 1.0;
      active_[static_cast<std::size_t>(j)] = false;
    } else {
      scale_[j] = sd;
    }
    z_.col(j) = (z_.col(j).array() - mean_[j]) / scale_[j];
    double bw = bandwidth.value_or(0.0);
    if (!bandwidth) {
      std::vector<double> col(z_.col(j).data(), z_.col(j).data() + n);
      bw = diagnostics::silverman_bandwidth(col);
    }
    bandwidth_[j] = std::max(bw, bandwidth ? bw : kMinBandwidth);
    if (!(bandwidth_[j] > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    // Store covariates pre-divided by the bandwidth.
    z_.col(j) /= bandwidth_[j];
  }
}

KernelEstimate KernelRegressor::predict(const Eigen::VectorXd& query) const {
  const Eigen::Index n = z_.rows();
  const Eigen::Index d = z_.cols();
  if (query.size() != d) throw std::invalid_argument("query has the wrong dimension");
  Eigen::VectorXd q(d);
  for (Eigen::Index j = 0; j < d; ++j) q[j] = (query[j] - mean_[j]) / scale_[j] / bandwidth_[j];

  double num = 0.0, den = 0.0;
  std::vector<double> dist2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!active_[static_cast<std::size_t>(j)]) continue;
      const double diff = z_(i, j) - q[j];
      s += diff * diff;
    }
    dist2[static_cast<std::size_t>(i)] = s;
    const double w = std::exp(-0.5 * s);
    num += w * y_[i];
    den += w;
  }
  if (den > 0.0) return {num / den, false};

  // All weights underflowed: mean of the three nearest points.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::partial_sort(order.begin(), order.begin() + 3, order.end(), [&](auto a, auto b) {
    return dist2[static_cast<std::size_t>(a)] < dist2[static_cast<std::size_t>(b)];
  });
  return {(y_[order[0]] + y_[order[1]] + y_[order[2]]) / 3.0, true};
}

KernelEstimate kernel_regress(const Eigen::VectorXd& query, const Eigen::MatrixXd& covariates,
                              const Eigen::VectorXd& y, std::optional<double> bandwidth) {
  return KernelRegressor(covariates, y, bandwidth).predict(query);
}

std::pair<double, double> z_interval(double e_y, double sigma, double ci) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  const double half = diagnostics::two_sided_z(ci) * sigma;
  return {e_y - half, e_y + half};
}

ConsumerEffectModel::ConsumerEffectModel(std::string consumer_id, std::vector<FeatureRow> rows,
                                         CausalOptions options)
    : consumer_id_(std::move(consumer_id)), rows_(std::move(rows)), options_(options) {
  if (rows_.empty()) throw DataError("no rows for consumer " + consumer_id_);
  std::map<std::pair<int, int>, std::size_t> freq;
  for (const auto& r : rows_) ++freq[{r.day_of_week, r.week_of_year}];
  z_freq_.assign(freq.begin(), freq.end());

  if (options_.mode == RegressionMode::kernel) {
    const auto n = static_cast<Eigen::Index>(rows_.size());
    Eigen::MatrixXd x(n, 4);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = rows_[static_cast<std::size_t>(i)];
      x.row(i) << r.price, r.hour, r.day_of_week, r.week_of_year;
      y[i] = r.consumption_kw;
    }
    if (static_cast<std::size_t>(n) < KernelRegressor::kMinPoints)
      throw DataError("consumer " + consumer_id_ + " has fewer than 5 rows");
    regressor_.emplace(std::move(x), std::move(y), options_.bandwidth);
  } else {
    for (const auto& r : rows_) {
      auto& cell = cells_[{r.price, r.hour, r.day_of_week, r.week_of_year}];
      cell.first += r.consumption_kw;
      ++cell.second;
    }
  }
}

double ConsumerEffectModel::regress(double price, int hour, int day, int week,
                                    bool& fallback) const {
  if (options_.mode == RegressionMode::kernel) {
    Eigen::VectorXd q(4);
    q << price, hour, day, week;
    const KernelEstimate e = regressor_->predict(q);
    fallback = fallback || e.fallback;
    return e.value;
  }
  const auto it = cells_.find({price, hour, day, week});
  if (it == cells_.end()) {
    throw DataError("exact-match regression: no rows for " + consumer_id_ + " at price " +
                    format_double(price) + ", hour " + std::to_string(hour) + ", day " +
                    std::to_string(day) + ", week " + std::to_string(week));
  }
  return it->second.first / static_cast<double>(it->second.second);
}

HourArray<std::optional<CausalEstimate>> ConsumerEffectModel::effect(double price) const {
  HourArray<std::size_t> at_price{};
  for (const auto& r : rows_)
    if (r.price == price) ++at_price[static_cast<std::size_t>(r.hour)];
  if (std::all_of(at_price.begin(), at_price.end(), [](std::size_t n) { return n == 0; }))
    throw DataError("consumer " + consumer_id_ + " has no rows at price " + format_double(price));

  const double total = static_cast<double>(rows_.size());
  const double z = diagnostics::two_sided_z(options_.ci);
  HourArray<std::optional<CausalEstimate>> out;
  parallel_for(
      kHours,
      [&](std::size_t h) {
        if (at_price[h] == 0) return;
        bool fallback = false;
        std::vector<double> per_z(z_freq_.size());
        double mean = 0.0;
        for (std::size_t k = 0; k < z_freq_.size(); ++k) {
          const auto& [dw, count] = z_freq_[k];
          per_z[k] = regress(price, static_cast<int>(h), dw.first, dw.second, fallback);
          mean += per_z[k] * static_cast<double>(count);
        }
        mean /= total;
        double ss = 0.0;
        for (std::size_t k = 0; k < z_freq_.size(); ++k)
          ss += static_cast<double>(z_freq_[k].second) * (per_z[k] - mean) * (per_z[k] - mean);
        const double sigma = std::sqrt(ss / total) / std::sqrt(total);
        CausalEstimate e;
        e.consumer_id = consumer_id_;
        e.hour = static_cast<int>(h);
        e.price = price;
        e.e_y = mean;
        e.lower = mean - z * sigma;
        e.upper = mean + z * sigma;
        e.ci = options_.ci;
        e.n_points = at_price[h];
        e.fallback = fallback;
        out[h] = std::move(e);
      },
      options_.threads == 0 ? default_thread_count() : options_.threads);
  return out;
}

HourArray<std::optional<CausalEstimate>> g_formula_effect(const CausalQuery& query,
                                                          const Dataset& dataset,
                                                          const CausalOptions& options) {
  return ConsumerEffectModel(query.consumer_id, dataset.rows_for(query.consumer_id), options)
      .effect(query.price);
}

std::vector<CausalEstimate> estimate_consumer(const Dataset& dataset, std::string_view consumer_id,
                                              const CausalOptions& options) {
  auto rows = dataset.rows_for(consumer_id);
  std::set<double> seen;
  for (const auto& r : rows) seen.insert(r.price);
  const ConsumerEffectModel model(std::string(consumer_id), std::move(rows), options);
  std::vector<CausalEstimate> out;
  for (const auto& t : dataset.tariff_set) {
    if (!seen.count(t.rate)) continue;
    for (auto& e : model.effect(t.rate))
      if (e) out.push_back(std::move(*e));
  }
  return out;
}

std::size_t ElasticityProfile::price_index(double price) const {
  const auto it = std::find(prices.begin(), prices.end(), price);
  if (it == prices.end())
    throw std::out_of_range("profile for " + consumer_id + " has no price " + format_double(price));
  return static_cast<std::size_t>(it - prices.begin());
}

namespace {

std::string label_for(double price, const std::vector<TariffLevel>& tariffs) {
  for (const auto& t : tariffs)
    if (t.rate == price) return t.label;
  std::string l = lcl::label_for_rate(price);
  return l.empty() ? "Custom:" + format_double(price) : l;
}

}  // namespace

ElasticityProfile derive_elasticity(const std::vector<CausalEstimate>& estimates,
                                    double default_price,
                                    const std::vector<TariffLevel>& tariffs) {
  ElasticityProfile profile;
  if (estimates.empty()) throw DataError("no causal estimates to derive elasticity from");
  profile.consumer_id = estimates.front().consumer_id;
  profile.prices.push_back(default_price);
  for (const auto& e : estimates) {
    if (e.consumer_id != profile.consumer_id)
      throw std::invalid_argument("derive_elasticity: estimates span several consumers");
    if (std::find(profile.prices.begin(), profile.prices.end(), e.price) == profile.prices.end())
      profile.prices.push_back(e.price);
  }
  // Keep non-default prices in tariff order when a tariff set is supplied.
  if (!tariffs.empty()) {
    std::stable_sort(profile.prices.begin() + 1, profile.prices.end(), [&](double a, double b) {
      auto rank = [&](double p) {
        for (std::size_t i = 0; i < tariffs.size(); ++i)
          if (tariffs[i].rate == p) return i;
        return tariffs.size();
      };
      return rank(a) < rank(b);
    });
  }
  for (double p : profile.prices) profile.labels.push_back(label_for(p, tariffs));
  const std::size_t k = profile.prices.size();
  profile.e_y.assign(k, {});
  profile.elasticity.assign(k, {});
  for (const auto& e : estimates)
    profile.e_y[profile.price_index(e.price)][static_cast<std::size_t>(e.hour)] = e.e_y;

  for (std::size_t h = 0; h < kHours; ++h) {
    const auto& base = profile.e_y[0][h];
    profile.baseline_e_y[h] = base;
    for (std::size_t i = 1; i < k; ++i) {
      if (!profile.e_y[i][h]) continue;
      if (!base) {
        throw DataError("consumer " + profile.consumer_id + ": hour " + std::to_string(h) +
                        " has estimates at price " + format_double(profile.prices[i]) +
                        " but none at the default price");
      }
      if (*base <= kElasticityEpsilon) continue;  // undefined: stays absent
      profile.elasticity[i][h] = (*profile.e_y[i][h] - *base) / *base;
    }
    if (base) profile.elasticity[0][h] = 0.0;
  }
  return profile;
}

HourArray<long> WeightMatrix::totals() const {
  HourArray<long> n{};
  for (const auto& row : counts)
    for (std::size_t h = 0; h < kHours; ++h) n[h] += row[h];
  return n;
}

void WeightMatrix::validate() const {
  if (outcomes.size() != counts.size())
    throw DataError("weight matrix: outcome labels and count rows differ in number");
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (long c : counts[i])
      if (c < 0) throw DataError("weight matrix: negative count for outcome " + outcomes[i]);
}

WeightMatrix rank_weights(const std::vector<HourArray<std::optional<double>>>& elasticities,
                          std::vector<std::string> outcomes, int scale_max) {
  if (scale_max < 1) throw std::invalid_argument("scale_max must be >= 1");
  if (elasticities.empty()) throw DataError("cannot rank an empty elasticity profile");
  if (outcomes.size() != elasticities.size())
    throw std::invalid_argument("one outcome label per elasticity row required");
  double max_abs = 0.0;
  for (const auto& row : elasticities)
    for (const auto& e : row)
      if (e) max_abs = std::max(max_abs, std::abs(*e));
  WeightMatrix w;
  w.outcomes = std::move(outcomes);
  w.counts.assign(elasticities.size(), {});
  if (max_abs > 0.0) {
    for (std::size_t i = 0; i < elasticities.size(); ++i)
      for (std::size_t h = 0; h < kHours; ++h)
        if (const auto& e = elasticities[i][h])
          w.counts[i][h] = std::lround(scale_max * std::abs(*e) / max_abs);
  }
  return w;
}

WeightMatrix rank_weights(const ElasticityProfile& profile, int scale_max) {
  return rank_weights(profile.elasticity, profile.labels, scale_max);
}

WeightMatrix rank_weights_pooled(const std::vector<ElasticityProfile>& profiles, double price,
                                 int scale_max) {
  if (profiles.empty()) throw DataError("cannot rank an empty set of profiles");
  std::vector<HourArray<std::optional<double>>> rows;
  std::vector<std::string> labels;
  for (const auto& p : profiles) {
    rows.push_back(p.elasticity[p.price_index(price)]);
    labels.push_back(p.consumer_id + "@" + format_double(price));
  }
  return rank_weights(rows, std::move(labels), scale_max);
}

std::string weights_to_csv(const WeightMatrix& weights) {
  std::string out = "outcome";
  for (int h = 0; h < kHours; ++h) out += ",h" + std::to_string(h);
  out += '\n';
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out += weights.outcomes[i];
    for (long c : weights.counts[i]) out += "," + std::to_string(c);
    out += '\n';
  }
  return out;
}

WeightMatrix weights_from_csv(std::string_view text) {
  std::string expected = "outcome";
  for (int h = 0; h < kHours; ++h) expected += ",h" + std::to_string(h);
  WeightMatrix w;
  std::size_t pos = 0, line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header) {
      if (line != expected) throw DataError("weights CSV: expected header '" + expected + "'");
      header = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != kHours + 1)
      throw DataError("weights CSV line " + std::to_string(line_no) + ": expected 25 fields");
    HourArray<long> row{};
    for (std::size_t h = 0; h < kHours; ++h) {
      const auto f = fields[h + 1];
      if (std::from_chars(f.data(), f.data() + f.size(), row[h]).ec != std::errc() || row[h] < 0)
        throw DataError("weights CSV line " + std::to_string(line_no) + ", column " +
                        std::to_string(h + 2) + ": counts must be non-negative integers");
    }
    w.outcomes.emplace_back(fields[0]);
    w.counts.push_back(row);
  }
  if (!header) throw DataError("weights CSV: missing header");
  return w;
}

std::string causal_to_json(const std::vector<CausalEstimate>& estimates,
                           const std::vector<ElasticityProfile>& profiles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : estimates) {
    nlohmann::json rec = {{"consumer_id", e.consumer_id}, {"hour", e.hour},
                          {"price", e.price},             {"e_y", e.e_y},
                          {"lower", e.lower},             {"upper", e.upper},
                          {"ci", e.ci},                   {"n_points", e.n_points},
                          {"fallback", e.fallback},       {"elasticity", nullptr}};
    for (const auto& p : profiles) {
      if (p.consumer_id != e.consumer_id) continue;
      const auto it = std::find(p.prices.begin(), p.prices.end(), e.price);
      if (it == p.prices.end()) continue;
      const auto& el = p.elasticity[static_cast<std::size_t>(it - p.prices.begin())]
                                   [static_cast<std::size_t>(e.hour)];
      if (el) rec["elasticity"] = *el;
    }
    arr.push_back(std::move(rec));
  }
  return arr.dump(1) + "\n";
}

std::vector<CausalEstimate> causal_from_json(std::string_view text) {
  std::vector<CausalEstimate> out;
  try {
    for (const auto& rec : nlohmann::json::parse(text)) {
      CausalEstimate e;
      e.consumer_id = rec.at("consumer_id").get<std::string>();
      e.hour = rec.at("hour").get<int>();
      e.price = rec.at("price").get<double>();
      e.e_y = rec.at("e_y").get<double>();
      e.lower = rec.at("lower").get<double>();
      e.upper = rec.at("upper").get<double>();
      e.ci = rec.at("ci").get<double>();
      e.n_points = rec.at("n_points").get<std::size_t>();
      e.fallback = rec.at("fallback").get<bool>();
      if (e.hour < 0 || e.hour >= kHours) throw DataError("causal JSON: hour out of range");
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("causal JSON: ") + ex.what());
  }
  return out;
}

}  // namespace drm::causal
