#include "drm/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "drm/common.hpp"

namespace drm::scorer {

std::string to_string(Mode mode) { return mode == Mode::pooled ? "pooled" : "per-consumer"; }

Mode mode_from_string(std::string_view text) {
  if (text == "per-consumer") return Mode::per_consumer;
  if (text == "pooled") return Mode::pooled;
  throw std::invalid_argument("unknown score mode '" + std::string(text) +
                              "' (expected per-consumer or pooled)");
}

std::string to_string(SamplingMethod method) {
  return method == SamplingMethod::conjugate ? "conjugate" : "nuts";
}

SamplingMethod method_from_string(std::string_view text) {
  if (text == "nuts") return SamplingMethod::nuts;
  if (text == "conjugate") return SamplingMethod::conjugate;
  throw std::invalid_argument("unknown sampling method '" + std::string(text) +
                              "' (expected nuts or conjugate)");
}

void DirichletMultinomialModel::validate() const {
  counts.validate();
  if (counts.size() == 0) throw std::invalid_argument("model needs at least one outcome");
  if (alpha.rows() != static_cast<Eigen::Index>(k()) || alpha.cols() != kHours)
    throw std::invalid_argument("alpha must be k x 24");
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    if (!(alpha.data()[i] > 0.0) || !std::isfinite(alpha.data()[i]))
      throw std::invalid_argument("Dirichlet alpha must be strictly positive");
}

DirichletMultinomialModel build_per_consumer_model(const causal::WeightMatrix& weights,
                                                   const Eigen::MatrixXd& alpha,
                                                   std::string subject) {
  DirichletMultinomialModel m;
  m.mode = Mode::per_consumer;
  m.subject = std::move(subject);
  m.counts = weights;
  m.alpha = alpha;
  m.validate();
  return m;
}

DirichletMultinomialModel build_per_consumer_model(const causal::WeightMatrix& weights,
                                                   double alpha, std::string subject) {
  return build_per_consumer_model(
      weights, Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(weights.size()), kHours, alpha),
      std::move(subject));
}

DirichletMultinomialModel build_pooled_model(const causal::WeightMatrix& weights, double alpha) {
  std::optional<double> price;
  for (const auto& label : weights.outcomes) {
    const auto at = label.rfind('@');
    if (at == std::string::npos)
      throw std::invalid_argument("pooled outcome '" + label + "' lacks an @price suffix");
    double p = 0.0;
    try {
      p = std::stod(label.substr(at + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("pooled outcome '" + label + "' has a malformed price");
    }
    if (price && *price != p)
      throw std::invalid_argument("pooled model mixes price levels " + format_double(*price) +
                                  " and " + format_double(p));
    price = p;
  }
  DirichletMultinomialModel m;
  m.mode = Mode::pooled;
  m.subject = "pooled";
  m.price = price;
  m.counts = weights;
  m.alpha = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(weights.size()), kHours, alpha);
  m.validate();
  return m;
}

DirichletMultinomialModel build_pooled_model(const std::vector<causal::ElasticityProfile>& profiles,
                                             double price, int scale_max, double alpha) {
  for (const auto& p : profiles) {
    if (std::find(p.prices.begin(), p.prices.end(), price) == p.prices.end())
      throw std::invalid_argument("consumer " + p.consumer_id + " never experienced price " +
                                  format_double(price));
  }
  return build_pooled_model(causal::rank_weights_pooled(profiles, price, scale_max), alpha);
}

Eigen::MatrixXd posterior_mean(const DirichletMultinomialModel& model) {
  model.validate();
  const auto k = static_cast<Eigen::Index>(model.k());
  Eigen::MatrixXd out(k, kHours);
  for (int h = 0; h < kHours; ++h) {
    double denom = 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
      denom += static_cast<double>(model.counts.counts[static_cast<std::size_t>(i)]
                                                     [static_cast<std::size_t>(h)]) +
               model.alpha(i, h);
    for (Eigen::Index i = 0; i < k; ++i)
      out(i, h) = (static_cast<double>(
                       model.counts.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(h)]) +
                   model.alpha(i, h)) /
                  denom;
  }
  return out;
}

double log_dirichlet_multinomial(const std::vector<double>& alpha,
                                 const std::vector<long>& counts) {
  if (alpha.size() != counts.size()) throw std::invalid_argument("alpha/count length mismatch");
  double sum_a = 0.0, sum_ac = 0.0, out = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double a = alpha[i];
    const double ac = a + static_cast<double>(counts[i]);
    out += std::lgamma(ac) - std::lgamma(a);
    sum_a += a;
    sum_ac += ac;
  }
  return out - std::lgamma(sum_ac) + std::lgamma(sum_a);
}

double marginal_likelihood(const DirichletMultinomialModel& model, int hour) {
  if (hour < 0 || hour >= kHours) throw std::invalid_argument("hour must be in 0-23");
  model.validate();
  std::vector<double> a(model.k());
  std::vector<long> c(model.k());
  for (std::size_t i = 0; i < model.k(); ++i) {
    a[i] = model.alpha(static_cast<Eigen::Index>(i), hour);
    c[i] = model.counts.counts[i][static_cast<std::size_t>(hour)];
  }
  return log_dirichlet_multinomial(a, c);
}

std::uint64_t hour_seed(std::uint64_t seed, int hour) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(hour + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

/// Unnormalized Dirichlet(a) density over the simplex.
class DirichletDensity final : public mcmc::ConstrainedModel {
public:
  DirichletDensity(mcmc::Vector a, std::vector<std::string> names)
      : a_(std::move(a)), names_(std::move(names)) {}

  std::size_t dimension() const override { return static_cast<std::size_t>(a_.size()); }

  double log_density(const mcmc::Vector& theta, mcmc::Vector& grad) const override {
    grad.resize(a_.size());
    double lp = 0.0;
    for (Eigen::Index i = 0; i < a_.size(); ++i) {
      lp += (a_[i] - 1.0) * std::log(theta[i]);
      grad[i] = (a_[i] - 1.0) / theta[i];
    }
    return lp;
  }

  std::vector<std::string> parameter_names() const override { return names_; }

private:
  mcmc::Vector a_;
  std::vector<std::string> names_;
};

mcmc::Trace constant_trace(const std::vector<std::string>& names, const mcmc::SamplerConfig& cfg) {
  mcmc::Trace t;
  t.names = names;
  t.chains = cfg.chains;
  t.draws = cfg.draws;
  t.samples.assign(cfg.chains * cfg.draws, 1.0);
  t.divergent.assign(cfg.chains * cfg.draws, 0);
  t.accept_stat.assign(cfg.chains * cfg.draws, 1.0);
  t.tree_depth.assign(cfg.chains * cfg.draws, 0);
  t.step_sizes.assign(cfg.chains, 0.0);
  return t;
}

mcmc::Trace conjugate_trace(const mcmc::Vector& a, const std::vector<std::string>& names,
                            const mcmc::SamplerConfig& cfg, std::uint64_t seed) {
  mcmc::Trace t;
  t.names = names;
  t.chains = cfg.chains;
  t.draws = cfg.draws;
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    Philox4x32 rng(seed + c, 0);
    for (const auto& x : mcmc::dirichlet_direct_sample(a, cfg.draws, rng))
      t.samples.insert(t.samples.end(), x.data(), x.data() + x.size());
  }
  t.divergent.assign(cfg.chains * cfg.draws, 0);
  t.accept_stat.assign(cfg.chains * cfg.draws, 1.0);
  t.tree_depth.assign(cfg.chains * cfg.draws, 0);
  t.step_sizes.assign(cfg.chains, 0.0);
  return t;
}

}  // namespace

ResponseScore sample_posterior(const DirichletMultinomialModel& model,
                               const mcmc::SamplerConfig& config, SamplingMethod method) {
  model.validate();
  config.validate();
  const std::size_t k = model.k();
  const auto ki = static_cast<Eigen::Index>(k);

  ResponseScore score;
  score.mode = model.mode;
  score.subject = model.subject;
  score.price = model.price;
  score.outcomes = model.counts.outcomes;
  score.alpha = model.alpha;
  score.counts = model.counts;
  score.config = config;
  score.method = method;
  score.exact_mean = posterior_mean(model);
  score.mean = Eigen::MatrixXd::Zero(ki, kHours);
  score.hpd5 = score.mean;
  score.hpd95 = score.mean;
  score.traces.resize(kHours);
  const auto totals = model.counts.totals();
  for (std::size_t h = 0; h < kHours; ++h) score.no_data[h] = totals[h] == 0;

  std::vector<diagnostics::DiagnosticsSummary> summaries(kHours);
  const std::size_t threads = config.threads == 0 ? default_thread_count() : config.threads;
  parallel_for(
      kHours,
      [&](std::size_t h) {
        mcmc::Vector a(ki);
        for (Eigen::Index i = 0; i < ki; ++i)
          a[i] = model.alpha(i, static_cast<Eigen::Index>(h)) +
                 static_cast<double>(model.counts.counts[static_cast<std::size_t>(i)][h]);
        std::vector<std::string> names;
        for (const auto& o : model.counts.outcomes) names.push_back(o);
        mcmc::SamplerConfig cfg = config;
        cfg.seed = hour_seed(config.seed, static_cast<int>(h));
        cfg.threads = 1;
        mcmc::Trace trace;
        if (k == 1) {
          trace = constant_trace(names, cfg);
        } else if (method == SamplingMethod::conjugate) {
          trace = conjugate_trace(a, names, cfg, cfg.seed);
        } else {
          auto density = std::make_shared<DirichletDensity>(a, names);
          mcmc::TransformedTarget target(density, {mcmc::Transform::simplex(k)});
          trace = mcmc::run_chains(target, cfg);
        }
        summaries[h] = diagnostics::summarize(trace);
        score.traces[h] = std::move(trace);
      },
      threads);

  score.min_ess = INFINITY;
  for (std::size_t h = 0; h < kHours; ++h) {
    const auto& s = summaries[h];
    for (Eigen::Index i = 0; i < ki; ++i) {
      const auto& p = s.parameters[static_cast<std::size_t>(i)];
      score.mean(i, static_cast<Eigen::Index>(h)) = p.mean;
      score.hpd5(i, static_cast<Eigen::Index>(h)) = p.hpd5;
      score.hpd95(i, static_cast<Eigen::Index>(h)) = p.hpd95;
    }
    score.max_r_hat = std::max(score.max_r_hat, s.max_r_hat());
    score.min_ess = std::min(score.min_ess, s.min_ess());
    score.divergences += s.divergences;
    for (const auto& w : score.traces[h].warnings)
      score.warnings.push_back("hour " + std::to_string(h) + ": " + w);
  }
  if (score.max_r_hat > 1.05)
    score.warnings.push_back("max R-hat " + format_double(score.max_r_hat) + " exceeds 1.05");
  return score;
}

std::vector<ScoreRow> summarize_scores(const ResponseScore& score, bool with_kde) {
  std::vector<ScoreRow> rows;
  rows.reserve(score.k() * kHours);
  for (std::size_t i = 0; i < score.k(); ++i) {
    for (int h = 0; h < kHours; ++h) {
      ScoreRow r;
      const auto ii = static_cast<Eigen::Index>(i);
      r.outcome = score.outcomes[i];
      r.hour = h;
      r.mean = score.mean(ii, h);
      r.hpd5 = score.hpd5(ii, h);
      r.hpd95 = score.hpd95(ii, h);
      r.exact_mean = score.exact_mean(ii, h);
      r.no_data = score.no_data[static_cast<std::size_t>(h)];
      if (with_kde && static_cast<std::size_t>(h) < score.traces.size() &&
          score.traces[static_cast<std::size_t>(h)].draws > 0) {
        const auto draws = score.traces[static_cast<std::size_t>(h)].pooled_draws(i);
        r.kde = diagnostics::kde(draws, kScoreKdePoints, 0.0, 1.0);
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index h = 0; h < m.cols(); ++h) row[static_cast<std::size_t>(h)] = m(i, h);
    out.push_back(row);
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, std::size_t k, const char* what) {
  if (!j.is_array() || j.size() != k)
    throw DataError(std::string("score JSON: '") + what + "' must have one row per outcome");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(k), kHours);
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = j[i].get<std::vector<double>>();
    if (row.size() != kHours)
      throw DataError(std::string("score JSON: '") + what + "' rows must have 24 entries");
    for (int h = 0; h < kHours; ++h)
      m(static_cast<Eigen::Index>(i), h) = row[static_cast<std::size_t>(h)];
  }
  return m;
}

}  // namespace

std::string score_to_json(const ResponseScore& score) {
  nlohmann::json doc;
  doc["mode"] = to_string(score.mode);
  doc["subject"] = score.subject;
  doc["price"] = score.price ? nlohmann::json(*score.price) : nlohmann::json(nullptr);
  doc["outcomes"] = score.outcomes;
  std::vector<int> hours(kHours);
  for (int h = 0; h < kHours; ++h) hours[static_cast<std::size_t>(h)] = h;
  doc["hours"] = hours;
  doc["mean"] = matrix_json(score.mean);
  doc["hpd5"] = matrix_json(score.hpd5);
  doc["hpd95"] = matrix_json(score.hpd95);
  doc["exact_mean"] = matrix_json(score.exact_mean);
  doc["alpha"] = matrix_json(score.alpha);
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& row : score.counts.counts) counts.push_back(row);
  doc["counts"] = counts;
  doc["no_data"] = score.no_data;
  doc["method"] = to_string(score.method);
  doc["config"] = mcmc::config_to_json(score.config);
  doc["seed"] = score.config.seed;
  doc["diagnostics"] = {{"max_r_hat", score.max_r_hat},
                        {"min_ess", std::isfinite(score.min_ess) ? score.min_ess : 0.0},
                        {"divergences", score.divergences},
                        {"warnings", score.warnings}};
  return doc.dump(1) + "\n";
}

ResponseScore score_from_json(std::string_view text) {
  ResponseScore s;
  try {
    const auto doc = nlohmann::json::parse(text);
    s.mode = mode_from_string(doc.at("mode").get<std::string>());
    s.subject = doc.value("subject", std::string());
    if (!doc.at("price").is_null()) s.price = doc.at("price").get<double>();
    s.outcomes = doc.at("outcomes").get<std::vector<std::string>>();
    const std::size_t k = s.outcomes.size();
    s.mean = matrix_from_json(doc.at("mean"), k, "mean");
    s.hpd5 = matrix_from_json(doc.at("hpd5"), k, "hpd5");
    s.hpd95 = matrix_from_json(doc.at("hpd95"), k, "hpd95");
    s.exact_mean = matrix_from_json(doc.at("exact_mean"), k, "exact_mean");
    s.alpha = matrix_from_json(doc.at("alpha"), k, "alpha");
    s.counts.outcomes = s.outcomes;
    for (const auto& row : doc.at("counts")) s.counts.counts.push_back(row.get<HourArray<long>>());
    s.counts.validate();
    s.no_data = doc.at("no_data").get<HourArray<bool>>();
    s.method = method_from_string(doc.at("method").get<std::string>());
    s.config = mcmc::config_from_json(doc.at("config"));
    const auto& d = doc.at("diagnostics");
    s.max_r_hat = d.at("max_r_hat").get<double>();
    s.min_ess = d.at("min_ess").get<double>();
    s.divergences = d.at("divergences").get<std::size_t>();
    s.warnings = d.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("score JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("score JSON: ") + e.what());
  }
  return s;
}

mcmc::Trace combined_trace(const ResponseScore& score) {
  if (score.traces.size() != kHours) throw std::invalid_argument("score carries no traces");
  const std::size_t k = score.k();
  mcmc::Trace t;
  t.chains = score.traces.front().chains;
  t.draws = score.traces.front().draws;
  for (int h = 0; h < kHours; ++h)
    for (const auto& o : score.outcomes)
      t.names.push_back("theta[" + std::to_string(h) + "][" + o + "]");
  t.samples.reserve(t.chains * t.draws * t.names.size());
  for (std::size_t c = 0; c < t.chains; ++c)
    for (std::size_t d = 0; d < t.draws; ++d)
      for (std::size_t h = 0; h < kHours; ++h)
        for (std::size_t i = 0; i < k; ++i) t.samples.push_back(score.traces[h].at(c, d, i));
  t.divergent.assign(t.chains * t.draws, 0);
  for (const auto& tr : score.traces)
    for (std::size_t j = 0; j < tr.divergent.size() && j < t.divergent.size(); ++j)
      t.divergent[j] = static_cast<std::uint8_t>(t.divergent[j] | tr.divergent[j]);
  return t;
}

void attach_combined_trace(ResponseScore& score, const mcmc::Trace& trace) {
  const std::size_t k = score.k();
  if (trace.dimension() != k * kHours)
    throw DataError("score trace has " + std::to_string(trace.dimension()) +
                    " parameters, expected " + std::to_string(k * kHours));
  score.traces.assign(kHours, {});
  for (std::size_t h = 0; h < kHours; ++h) {
    auto& t = score.traces[h];
    t.names = score.outcomes;
    t.chains = trace.chains;
    t.draws = trace.draws;
    t.samples.reserve(t.chains * t.draws * k);
    for (std::size_t c = 0; c < trace.chains; ++c)
      for (std::size_t d = 0; d < trace.draws; ++d)
        for (std::size_t i = 0; i < k; ++i) t.samples.push_back(trace.at(c, d, h * k + i));
    t.divergent.assign(t.chains * t.draws, 0);
  }
}

}  // namespace drm::scorer
