#include "drm/glm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>
#include <nlohmann/json.hpp>

#include "drm/common.hpp"

namespace drm::glm {

double GlmDesign::raw_column(const DesignRow& row, std::size_t column) {
  switch (column) {
    case kTempHigh: return row.temp_high;
    case kTempLow: return row.temp_low;
    case kTempAvg: return row.temp_avg;
    case kAvgTimesHour: return row.consumption_avg * row.hour;
    case kDiffTimesHour: return row.consumption_difference * row.hour;
    default: throw std::out_of_range("design column index");
  }
}

GlmDesign make_design(std::string consumer_id, std::vector<double> prices,
                      std::vector<std::string> labels, const std::vector<RawRow>& rows) {
  if (prices.empty()) throw DataError("design needs at least one price level");
  if (labels.size() != prices.size()) throw std::invalid_argument("one label per price required");
  if (std::set<double>(prices.begin(), prices.end()).size() != prices.size())
    throw DataError("design price levels must be distinct");

  GlmDesign d;
  d.consumer_id = std::move(consumer_id);
  d.prices = std::move(prices);
  d.labels = std::move(labels);
  const std::size_t n = d.prices.size() * kHours;
  std::vector<std::optional<RawRow>> cells(n);
  std::vector<std::string> problems;
  for (const auto& r : rows) {
    const auto it = std::find(d.prices.begin(), d.prices.end(), r.price);
    if (it == d.prices.end() || r.hour < 0 || r.hour >= kHours) {
      problems.push_back("unexpected cell (" + format_double(r.price) + ", " +
                         std::to_string(r.hour) + ")");
      continue;
    }
    const std::size_t idx = d.row_index(static_cast<std::size_t>(it - d.prices.begin()), r.hour);
    if (cells[idx]) {
      problems.push_back("duplicate cell (" + format_double(r.price) + ", " +
                         std::to_string(r.hour) + ")");
      continue;
    }
    cells[idx] = r;
  }
  for (std::size_t b = 0; b < d.prices.size(); ++b)
    for (int h = 0; h < kHours; ++h)
      if (!cells[d.row_index(b, h)])
        problems.push_back("missing cell (" + d.labels[b] + ", hour " + std::to_string(h) + ")");
  if (!problems.empty()) {
    std::string msg = "design for " + d.consumer_id + ":";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw DataError(msg);
  }

  d.rows.resize(n);
  for (std::size_t b = 0; b < d.prices.size(); ++b) {
    for (int h = 0; h < kHours; ++h) {
      const RawRow& r = *cells[d.row_index(b, h)];
      DesignRow& row = d.rows[d.row_index(b, h)];
      row.hour = h;
      row.price = r.price;
      row.price_block = b;
      row.price_sq = r.price * r.price;
      row.price_cu = r.price * r.price * r.price;
      row.temp_high = r.temp_high;
      row.temp_low = r.temp_low;
      row.temp_avg = r.temp_avg;
      row.consumption_avg = r.consumption_avg;
      row.consumption_difference = b == 0 ? 0.0 : r.consumption_difference;
      row.y = r.y;
    }
  }

  for (std::size_t c = 0; c < kColumns; ++c) {
    double mean = 0.0;
    for (const auto& row : d.rows) mean += GlmDesign::raw_column(row, c);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& row : d.rows) {
      const double v = GlmDesign::raw_column(row, c) - mean;
      ss += v * v;
    }
    Standardization s;
    s.mean = mean;
    s.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (!(s.sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      s.sd = 1.0;
      s.degenerate = true;
      d.degenerate_columns.emplace_back(kColumnNames[c]);
    }
    d.scaling[c] = s;
    for (auto& row : d.rows) row.x[c] = s.apply(GlmDesign::raw_column(row, c));
  }
  return d;
}

GlmDesign build_design(const causal::ElasticityProfile& profile, const Dataset& dataset) {
  const auto rows = dataset.rows_for(profile.consumer_id);
  std::map<std::pair<double, int>, const FeatureRow*> temps;
  for (const auto& r : rows) temps.try_emplace({r.price, r.hour}, &r);

  std::vector<RawRow> raw;
  std::vector<std::string> missing;
  for (std::size_t b = 0; b < profile.prices.size(); ++b) {
    for (int h = 0; h < kHours; ++h) {
      const auto hh = static_cast<std::size_t>(h);
      const auto& el = profile.elasticity[b][hh];
      const auto& ey = profile.e_y[b][hh];
      const auto& base = profile.e_y[0][hh];
      const auto t = temps.find({profile.prices[b], h});
      if (!el || !ey || !base || t == temps.end()) {
        missing.push_back("(" + profile.labels[b] + ", hour " + std::to_string(h) + ")");
        continue;
      }
      RawRow r;
      r.hour = h;
      r.price = profile.prices[b];
      r.temp_high = t->second->temp_high;
      r.temp_low = t->second->temp_low;
      r.temp_avg = t->second->temp_avg;
      r.consumption_avg = *ey;
      r.consumption_difference = *base - *ey;
      r.y = *el;
      raw.push_back(r);
    }
  }
  if (!missing.empty()) {
    std::string msg = "design for " + profile.consumer_id + " is missing cells:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  return make_design(profile.consumer_id, profile.prices, profile.labels, raw);
}

void PriorSpec::validate() const {
  for (const auto* p : {&beta0, &beta1, &beta2, &th, &tl, &ta, &yavg, &ydiff})
    if (!(p->sd > 0.0)) throw std::invalid_argument("prior sd must be > 0");
  if (!(nu_lo < nu_hi) || nu_lo < 0.0) throw std::invalid_argument("need 0 <= nu_lo < nu_hi");
  if (!(sigma_rate > 0.0)) throw std::invalid_argument("sigma rate must be > 0");
}

std::vector<std::string> ParameterLayout::names(const std::vector<std::string>& labels) const {
  std::vector<std::string> out(size());
  for (int h = 0; h < kHours; ++h) {
    out[beta0(h)] = "beta0[" + std::to_string(h) + "]";
    out[beta1(h)] = "beta1[" + std::to_string(h) + "]";
    if (separate_cubic) out[beta2(h)] = "beta2[" + std::to_string(h) + "]";
  }
  for (std::size_t c = 0; c < kColumns; ++c)
    for (std::size_t b = 0; b < n_prices; ++b)
      out[coefficient(c, b)] = std::string(kCoefficientNames[c]) + "[" + labels[b] + "]";
  out[nu()] = "nu";
  out[sigma()] = "sigma";
  return out;
}

double student_t_logpdf(double x, double mu, double lambda, double nu) {
  const double r = x - mu;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) +
         0.5 * std::log(lambda / (M_PI * nu)) -
         0.5 * (nu + 1.0) * std::log1p(lambda * r * r / nu);
}

namespace {

double normal_prior(double x, const NormalPrior& p, double& grad) {
  const double z = (x - p.mean) / p.sd;
  grad += -z / p.sd;
  return -0.5 * z * z - std::log(p.sd) - 0.5 * std::log(2.0 * M_PI);
}

}  // namespace

GlmModel::GlmModel(GlmDesign design, PriorSpec priors, GlmOptions options)
    : design_(std::move(design)), priors_(priors), options_(options) {
  priors_.validate();
  if (design_.rows.size() != design_.n_prices() * kHours)
    throw std::invalid_argument("design must have one row per (price, hour)");
  layout_.n_prices = design_.n_prices();
  layout_.separate_cubic = options_.separate_cubic;
}

std::vector<std::string> GlmModel::parameter_names() const {
  return layout_.names(design_.labels);
}

std::vector<mcmc::Transform> GlmModel::transforms() const {
  return {mcmc::Transform::unbounded(layout_.nu()),
          mcmc::Transform::interval(priors_.nu_lo, priors_.nu_hi),
          mcmc::Transform::positive()};
}

double GlmModel::mu(const mcmc::Vector& params, std::size_t r) const {
  const DesignRow& row = design_.rows[r];
  double m = params[layout_.beta0(row.hour)];
  if (layout_.separate_cubic)
    m += params[layout_.beta1(row.hour)] * row.price_sq +
         params[layout_.beta2(row.hour)] * row.price_cu;
  else
    m += params[layout_.beta1(row.hour)] * (row.price_sq + row.price_cu);
  for (std::size_t c = 0; c < kColumns; ++c)
    m += params[layout_.coefficient(c, row.price_block)] * row.x[c];
  return m;
}

double GlmModel::log_density(const mcmc::Vector& params, mcmc::Vector& grad) const {
  return evaluate(params, grad, false);
}

double GlmModel::log_posterior(const mcmc::Vector& params, mcmc::Vector& grad) const {
  return evaluate(params, grad, true);
}

double GlmModel::evaluate(const mcmc::Vector& params, mcmc::Vector& grad, bool strict) const {
  const std::size_t n = layout_.size();
  if (static_cast<std::size_t>(params.size()) != n)
    throw std::invalid_argument("parameter vector has the wrong size");
  grad = mcmc::Vector::Zero(static_cast<Eigen::Index>(n));
  const double nu = params[layout_.nu()];
  const double sigma = params[layout_.sigma()];
  if (!(sigma > 0.0) || !(nu > priors_.nu_lo && nu < priors_.nu_hi)) {
    if (strict) throw std::invalid_argument("nu or sigma outside prior support");
    return -INFINITY;
  }
  const double lambda = 1.0 / (sigma * sigma);
  const bool student = options_.likelihood == Likelihood::student_t;
  const double log_norm =
      student ? std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) +
                    0.5 * std::log(lambda / (M_PI * nu))
              : 0.5 * std::log(lambda / (2.0 * M_PI));
  const double dnu_const =
      student ? 0.5 * (boost::math::digamma(0.5 * (nu + 1.0)) - boost::math::digamma(0.5 * nu)) -
                    0.5 / nu
              : 0.0;

  double lp = 0.0, d_lambda = 0.0, d_nu = 0.0;
  for (std::size_t r = 0; r < design_.rows.size(); ++r) {
    const DesignRow& row = design_.rows[r];
    const double res = row.y - mu(params, r);
    const double r2 = res * res;
    double ll, d_mu;
    if (student) {
      const double q = nu + lambda * r2;
      ll = log_norm - 0.5 * (nu + 1.0) * std::log(q / nu);
      d_mu = (nu + 1.0) * lambda * res / q;
      d_lambda += 0.5 / lambda - 0.5 * (nu + 1.0) * r2 / q;
      d_nu += dnu_const - 0.5 * std::log(q / nu) + 0.5 * (nu + 1.0) * lambda * r2 / (nu * q);
    } else {
      ll = log_norm - 0.5 * lambda * r2;
      d_mu = lambda * res;
      d_lambda += 0.5 / lambda - 0.5 * r2;
    }
    if (!std::isfinite(ll)) {
      if (strict)
        throw DataError("non-finite log-likelihood at design row " + std::to_string(r) + " (" +
                        design_.labels[row.price_block] + ", hour " + std::to_string(row.hour) +
                        ")");
      return -INFINITY;
    }
    lp += ll;
    grad[static_cast<Eigen::Index>(layout_.beta0(row.hour))] += d_mu;
    if (layout_.separate_cubic) {
      grad[static_cast<Eigen::Index>(layout_.beta1(row.hour))] += d_mu * row.price_sq;
      grad[static_cast<Eigen::Index>(layout_.beta2(row.hour))] += d_mu * row.price_cu;
    } else {
      grad[static_cast<Eigen::Index>(layout_.beta1(row.hour))] +=
          d_mu * (row.price_sq + row.price_cu);
    }
    for (std::size_t c = 0; c < kColumns; ++c)
      grad[static_cast<Eigen::Index>(layout_.coefficient(c, row.price_block))] += d_mu * row.x[c];
  }
  grad[static_cast<Eigen::Index>(layout_.sigma())] += d_lambda * (-2.0 / (sigma * sigma * sigma));
  grad[static_cast<Eigen::Index>(layout_.nu())] += d_nu;

  // Priors.
  for (int h = 0; h < kHours; ++h) {
    auto i0 = static_cast<Eigen::Index>(layout_.beta0(h));
    auto i1 = static_cast<Eigen::Index>(layout_.beta1(h));
    lp += normal_prior(params[i0], priors_.beta0, grad[i0]);
    lp += normal_prior(params[i1], priors_.beta1, grad[i1]);
    if (layout_.separate_cubic) {
      auto i2 = static_cast<Eigen::Index>(layout_.beta2(h));
      lp += normal_prior(params[i2], priors_.beta2, grad[i2]);
    }
  }
  const std::array<const NormalPrior*, kColumns> family = {&priors_.th, &priors_.tl, &priors_.ta,
                                                           &priors_.yavg, &priors_.ydiff};
  for (std::size_t c = 0; c < kColumns; ++c)
    for (std::size_t b = 0; b < layout_.n_prices; ++b) {
      auto i = static_cast<Eigen::Index>(layout_.coefficient(c, b));
      lp += normal_prior(params[i], *family[c], grad[i]);
    }
  lp += -std::log(priors_.nu_hi - priors_.nu_lo);
  lp += std::log(priors_.sigma_rate) - priors_.sigma_rate * sigma;
  grad[static_cast<Eigen::Index>(layout_.sigma())] += -priors_.sigma_rate;
  return lp;
}

mcmc::Vector GlmPosterior::draw(std::size_t d) const {
  const std::size_t chain = d / trace.draws, idx = d % trace.draws;
  mcmc::Vector v(static_cast<Eigen::Index>(trace.dimension()));
  for (std::size_t p = 0; p < trace.dimension(); ++p)
    v[static_cast<Eigen::Index>(p)] = trace.at(chain, idx, p);
  return v;
}

std::vector<double> GlmPosterior::row_means() const {
  const GlmModel model(design, priors, options);
  std::vector<double> out(design.rows.size(), 0.0);
  const std::size_t n = n_draws();
  for (std::size_t d = 0; d < n; ++d) {
    const auto v = draw(d);
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += model.mu(v, r);
  }
  for (double& m : out) m /= static_cast<double>(n);
  return out;
}

GlmPosterior fit(const GlmDesign& design, const PriorSpec& priors,
                 const mcmc::SamplerConfig& config, const GlmOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto model = std::make_shared<GlmModel>(design, priors, options);
  const mcmc::TransformedTarget target(model, model->transforms());
  GlmPosterior post;
  post.design = design;
  post.priors = priors;
  post.options = options;
  post.config = config;
  post.layout = model->layout();
  try {
    post.trace = mcmc::run_chains(target, config);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string("behaviour model for ") + design.consumer_id + ": " +
                           e.what());
  }
  const double runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  post.summary = diagnostics::summarize(post.trace, runtime);
  post.warnings = post.trace.warnings;
  std::size_t high = 0;
  const diagnostics::ParameterSummary* worst = nullptr;
  for (const auto& p : post.summary.parameters) {
    if (!p.r_hat || *p.r_hat <= 1.05) continue;
    ++high;
    if (!worst || *p.r_hat > *worst->r_hat) worst = &p;
  }
  if (worst)
    post.warnings.push_back(std::to_string(high) + " parameters have R-hat above 1.05; worst " +
                            worst->name + " at " + format_double(*worst->r_hat));
  return post;
}

namespace {

/// Per-price coefficient at an arbitrary price.
double coefficient_at(const GlmPosterior& post, const mcmc::Vector& params, std::size_t column,
                      double price) {
  const auto& prices = post.design.prices;
  std::vector<std::size_t> order(prices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return prices[a] < prices[b]; });
  auto value = [&](std::size_t b) {
    return params[static_cast<Eigen::Index>(post.layout.coefficient(column, b))];
  };
  if (price <= prices[order.front()]) return value(order.front());
  if (price >= prices[order.back()]) return value(order.back());
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const double lo = prices[order[i]], hi = prices[order[i + 1]];
    if (price == lo) return value(order[i]);
    if (price < hi) {
      const double w = (price - lo) / (hi - lo);
      return (1.0 - w) * value(order[i]) + w * value(order[i + 1]);
    }
  }
  return value(order.back());
}

double price_term(const GlmPosterior& post, const mcmc::Vector& params, double price, int hour) {
  const double p2 = price * price, p3 = p2 * price;
  if (post.layout.separate_cubic)
    return params[static_cast<Eigen::Index>(post.layout.beta1(hour))] * p2 +
           params[static_cast<Eigen::Index>(post.layout.beta2(hour))] * p3;
  return params[static_cast<Eigen::Index>(post.layout.beta1(hour))] * (p2 + p3);
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double mu_at(const GlmPosterior& post, const mcmc::Vector& params, double price, int hour,
             const std::array<double, kColumns>& standardized) {
  double m = params[static_cast<Eigen::Index>(post.layout.beta0(hour))] +
             price_term(post, params, price, hour);
  for (std::size_t c = 0; c < kColumns; ++c)
    if (standardized[c] != 0.0) m += coefficient_at(post, params, c, price) * standardized[c];
  return m;
}

Prediction predict_elasticity(const GlmPosterior& post, double price, int hour,
                              const Covariates& cov, std::uint64_t seed) {
  if (hour < 0 || hour >= kHours) throw std::invalid_argument("hour must be in 0-23");
  if (!(price > 0.0) || !std::isfinite(price)) throw std::invalid_argument("price must be > 0");
  const std::size_t n = post.n_draws();
  if (n == 0) throw std::invalid_argument("posterior has no draws");
  const std::array<double, kColumns> raw = {cov.temp_high, cov.temp_low, cov.temp_avg,
                                            cov.consumption_avg * hour,
                                            cov.consumption_difference * hour};
  std::array<double, kColumns> x{};
  for (std::size_t c = 0; c < kColumns; ++c) x[c] = post.design.scaling[c].apply(raw[c]);

  Prediction out;
  out.price = price;
  out.hour = hour;
  out.n_draws = n;
  out.mu_draws.resize(n);
  out.draws.resize(n);
  Philox4x32 rng(seed, 1);
  std::normal_distribution<double> normal;
  const bool student = post.options.likelihood == Likelihood::student_t;
  double sum = 0.0;
  for (std::size_t d = 0; d < n; ++d) {
    const auto v = post.draw(d);
    const double m = mu_at(post, v, price, hour, x);
    const double sigma = v[static_cast<Eigen::Index>(post.layout.sigma())];
    const double nu = v[static_cast<Eigen::Index>(post.layout.nu())];
    double t = normal(rng);
    if (student) {
      std::gamma_distribution<double> chi2(0.5 * nu, 2.0);
      t /= std::sqrt(chi2(rng) / nu);
    }
    out.mu_draws[d] = m;
    out.draws[d] = m + sigma * t;
    sum += m;
  }
  out.mean = sum / static_cast<double>(n);
  out.q05 = quantile(out.draws, 0.05);
  out.q95 = quantile(out.draws, 0.95);
  return out;
}

RegressionLines regression_lines(const GlmPosterior& post, const std::vector<double>& grid,
                                 std::optional<int> hour, std::size_t n_draws) {
  if (grid.empty()) throw std::invalid_argument("regression grid is empty");
  if (hour && (*hour < 0 || *hour >= kHours)) throw std::invalid_argument("hour must be in 0-23");
  const std::size_t total = post.n_draws();
  if (total == 0) throw std::invalid_argument("posterior has no draws");
  const std::size_t m = std::max<std::size_t>(1, std::min(n_draws, total));
  RegressionLines out;
  out.hour = hour;
  out.grid = grid;
  out.mean.assign(grid.size(), 0.0);
  const std::array<double, kColumns> zero{};
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t d = i * total / m;
    const auto v = post.draw(d);
    std::vector<double> curve(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (hour) {
        curve[g] = mu_at(post, v, grid[g], *hour, zero);
      } else {
        double s = 0.0;
        for (int h = 0; h < kHours; ++h) s += mu_at(post, v, grid[g], h, zero);
        curve[g] = s / kHours;
      }
      out.mean[g] += curve[g];
    }
    out.draw_index.push_back(d);
    out.curves.push_back(std::move(curve));
  }
  for (double& x : out.mean) x /= static_cast<double>(m);
  return out;
}

namespace {

nlohmann::json prior_json(const NormalPrior& p) { return {{"mean", p.mean}, {"sd", p.sd}}; }
NormalPrior prior_from(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("sd").get<double>()};
}

}  // namespace

std::string posterior_to_json(const GlmPosterior& post, std::string_view trace_ref) {
  nlohmann::json doc;
  doc["consumer_id"] = post.design.consumer_id;
  doc["trace"] = std::string(trace_ref);
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < post.summary.parameters.size(); ++i) {
    const auto& p = post.summary.parameters[i];
    nlohmann::json e = {{"name", p.name},   {"mean", p.mean},         {"sd", p.sd},
                        {"hpd5", p.hpd5},   {"hpd95", p.hpd95},       {"ess_bulk", p.ess_bulk},
                        {"r_hat", p.r_hat ? nlohmann::json(*p.r_hat) : nlohmann::json(nullptr)},
                        {"natural_scale", nullptr}};
    // Slopes on standardized columns, converted back to natural units.
    for (std::size_t c = 0; c < kColumns; ++c)
      for (std::size_t b = 0; b < post.layout.n_prices; ++b)
        if (post.layout.coefficient(c, b) == i && !post.design.scaling[c].degenerate)
          e["natural_scale"] = p.mean / post.design.scaling[c].sd;
    params.push_back(std::move(e));
  }
  doc["params"] = std::move(params);
  doc["r_hat"] = post.summary.max_r_hat();
  doc["ess"] = post.summary.parameters.empty() ? 0.0 : post.summary.min_ess();
  doc["divergences"] = post.summary.divergences;
  doc["warnings"] = post.warnings;
  nlohmann::json scaling = nlohmann::json::array();
  for (std::size_t c = 0; c < kColumns; ++c)
    scaling.push_back({{"column", kColumnNames[c]},
                       {"mean", post.design.scaling[c].mean},
                       {"sd", post.design.scaling[c].sd},
                       {"degenerate", post.design.scaling[c].degenerate}});
  doc["standardization"] = std::move(scaling);
  const auto& pr = post.priors;
  doc["priors"] = {{"beta0", prior_json(pr.beta0)}, {"beta1", prior_json(pr.beta1)},
                   {"beta2", prior_json(pr.beta2)}, {"th", prior_json(pr.th)},
                   {"tl", prior_json(pr.tl)},       {"ta", prior_json(pr.ta)},
                   {"yavg", prior_json(pr.yavg)},   {"ydiff", prior_json(pr.ydiff)},
                   {"nu", {{"lower", pr.nu_lo}, {"upper", pr.nu_hi}}},
                   {"sigma_rate", pr.sigma_rate}};
  doc["options"] = {{"separate_cubic", post.options.separate_cubic},
                    {"likelihood",
                     post.options.likelihood == Likelihood::normal ? "normal" : "student_t"}};
  doc["config"] = mcmc::config_to_json(post.config);
  nlohmann::json design = {{"prices", post.design.prices}, {"labels", post.design.labels}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : post.design.rows)
    rows.push_back({{"hour", r.hour},
                    {"price", r.price},
                    {"temp_high", r.temp_high},
                    {"temp_low", r.temp_low},
                    {"temp_avg", r.temp_avg},
                    {"consumption_avg", r.consumption_avg},
                    {"consumption_difference", r.consumption_difference},
                    {"y", r.y}});
  design["rows"] = std::move(rows);
  design["degenerate_columns"] = post.design.degenerate_columns;
  doc["design"] = std::move(design);
  return doc.dump(1) + "\n";
}

std::string trace_ref_from_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text).at("trace").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("posterior JSON: ") + e.what());
  }
}

GlmPosterior posterior_from_json(std::string_view text, const mcmc::Trace& trace) {
  GlmPosterior post;
  try {
    const auto doc = nlohmann::json::parse(text);
    const auto& pr = doc.at("priors");
    post.priors.beta0 = prior_from(pr.at("beta0"));
    post.priors.beta1 = prior_from(pr.at("beta1"));
    post.priors.beta2 = prior_from(pr.at("beta2"));
    post.priors.th = prior_from(pr.at("th"));
    post.priors.tl = prior_from(pr.at("tl"));
    post.priors.ta = prior_from(pr.at("ta"));
    post.priors.yavg = prior_from(pr.at("yavg"));
    post.priors.ydiff = prior_from(pr.at("ydiff"));
    post.priors.nu_lo = pr.at("nu").at("lower").get<double>();
    post.priors.nu_hi = pr.at("nu").at("upper").get<double>();
    post.priors.sigma_rate = pr.at("sigma_rate").get<double>();
    post.options.separate_cubic = doc.at("options").at("separate_cubic").get<bool>();
    post.options.likelihood = doc.at("options").at("likelihood").get<std::string>() == "normal"
                                  ? Likelihood::normal
                                  : Likelihood::student_t;
    post.config = mcmc::config_from_json(doc.at("config"));
    const auto& d = doc.at("design");
    std::vector<RawRow> rows;
    for (const auto& r : d.at("rows"))
      rows.push_back({r.at("hour").get<int>(), r.at("price").get<double>(),
                      r.at("temp_high").get<double>(), r.at("temp_low").get<double>(),
                      r.at("temp_avg").get<double>(), r.at("consumption_avg").get<double>(),
                      r.at("consumption_difference").get<double>(), r.at("y").get<double>()});
    post.design = make_design(doc.at("consumer_id").get<std::string>(),
                              d.at("prices").get<std::vector<double>>(),
                              d.at("labels").get<std::vector<std::string>>(), rows);
    post.warnings = doc.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("posterior JSON: ") + e.what());
  }
  post.layout.n_prices = post.design.n_prices();
  post.layout.separate_cubic = post.options.separate_cubic;
  const auto expected = post.layout.names(post.design.labels);
  if (trace.names != expected)
    throw DataError("trace parameters do not match the posterior's design");
  post.trace = trace;
  post.summary = diagnostics::summarize(trace);
  return post;
}

std::string prediction_to_json(const Prediction& p) {
  nlohmann::json doc = {{"price", p.price}, {"hour", p.hour}, {"mean", p.mean},
                        {"q05", p.q05},     {"q95", p.q95},   {"n_draws", p.n_draws}};
  return doc.dump(1) + "\n";
}

}  // namespace drm::glm
