#include "drm/mcmc/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "drm/common.hpp"

namespace drm::mcmc {

void SamplerConfig::validate() const {
  if (draws == 0) throw std::invalid_argument("draws must be > 0");
  if (chains == 0) throw std::invalid_argument("chains must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw std::invalid_argument("target_accept must be in (0, 1)");
  if (max_tree_depth < 1) throw std::invalid_argument("max_tree_depth must be >= 1");
  if (!(max_energy_error > 0.0)) throw std::invalid_argument("max_energy_error must be > 0");
}

nlohmann::json config_to_json(const SamplerConfig& config) {
  return {{"draws", config.draws},
          {"tune", config.tune},
          {"chains", config.chains},
          {"seed", config.seed},
          {"target_accept", config.target_accept},
          {"max_tree_depth", config.max_tree_depth},
          {"max_energy_error", config.max_energy_error},
          {"weighting", config.weighting == TreeWeighting::slice ? "slice" : "multinomial"},
          {"adapt_metric", config.adapt_metric},
          {"metric", config.metric == MetricKind::dense ? "dense" : "diagonal"}};
}

SamplerConfig config_from_json(const nlohmann::json& doc, SamplerConfig c) {
  c.draws = doc.value("draws", c.draws);
  c.tune = doc.value("tune", c.tune);
  c.chains = doc.value("chains", c.chains);
  c.seed = doc.value("seed", c.seed);
  c.target_accept = doc.value("target_accept", c.target_accept);
  c.max_tree_depth = doc.value("max_tree_depth", c.max_tree_depth);
  c.max_energy_error = doc.value("max_energy_error", c.max_energy_error);
  if (doc.contains("weighting"))
    c.weighting = doc.at("weighting").get<std::string>() == "slice" ? TreeWeighting::slice
                                                                    : TreeWeighting::multinomial;
  c.adapt_metric = doc.value("adapt_metric", c.adapt_metric);
  if (doc.contains("metric"))
    c.metric = doc.at("metric").get<std::string>() == "dense" ? MetricKind::dense
                                                              : MetricKind::diagonal;
  return c;
}

SamplerConfig score_sampler_defaults() {
  SamplerConfig c;
  c.draws = 5000;
  c.tune = 1000;
  c.chains = 4;
  return c;
}

SamplerConfig glm_sampler_defaults() {
  SamplerConfig c;
  c.draws = 2000;
  c.tune = 1000;
  c.chains = 4;
  c.metric = MetricKind::dense;
  return c;
}

std::vector<double> Trace::chain_draws(std::size_t chain, std::size_t param) const {
  std::vector<double> out(draws);
  for (std::size_t d = 0; d < draws; ++d) out[d] = at(chain, d, param);
  return out;
}

std::vector<double> Trace::pooled_draws(std::size_t param) const {
  std::vector<double> out;
  out.reserve(chains * draws);
  for (std::size_t c = 0; c < chains; ++c)
    for (std::size_t d = 0; d < draws; ++d) out.push_back(at(c, d, param));
  return out;
}

std::size_t Trace::divergence_count() const {
  return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
}

std::size_t Trace::index_of(std::string_view name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return static_cast<std::size_t>(it - names.begin());
}

namespace {

struct ChainOutput {
  std::vector<double> samples;
  std::vector<std::uint8_t> divergent;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  double step_size = 0.0;
};

PhasePoint initialize(const LogDensityTarget& target, Philox4x32& rng) {
  PhasePoint z;
  const auto n = static_cast<Eigen::Index>(target.dimension());
  if (auto init = target.initial_point()) {
    z.q = *init;
    if (refresh(z, target)) return z;
  }
  for (int attempt = 0; attempt < 100; ++attempt) {
    z.q.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) z.q[i] = -2.0 + 4.0 * rng.uniform();
    if (refresh(z, target)) return z;
  }
  throw ConvergenceError("could not find a finite initial point after 100 attempts");
}

ChainOutput run_chain(const LogDensityTarget& target, const SamplerConfig& config,
                      std::size_t chain) {
  Philox4x32 rng(config.seed + chain, 0);
  const std::size_t cdim = target.constrained_dimension();
  const auto n = static_cast<Eigen::Index>(target.dimension());

  PhasePoint z = initialize(target, rng);
  Metric inv_metric(static_cast<std::size_t>(n), config.metric);
  NutsOptions options{config.max_tree_depth, config.max_energy_error, config.weighting};

  double step = 1.0;
  if (config.tune > 0) step = find_reasonable_step_size(z, step, target, inv_metric, rng);
  DualAveraging adapter(config.target_accept);
  adapter.restart(step);
  MetricAdaptation metric(target.dimension(), config.tune, config.metric);

  ChainOutput out;
  out.samples.reserve(config.draws * cdim);
  out.divergent.reserve(config.draws);
  out.accept_stat.reserve(config.draws);
  out.tree_depth.reserve(config.draws);

  for (std::size_t iter = 0; iter < config.tune + config.draws; ++iter) {
    const TreeStats stats = nuts_draw(z, target, step, inv_metric, rng, options);
    if (iter < config.tune) {
      step = adapter.learn(stats.accept_stat);
      if (config.adapt_metric && metric.observe(z.q, inv_metric)) {
        step = find_reasonable_step_size(z, step, target, inv_metric, rng);
        adapter.restart(step);
      }
      if (iter + 1 == config.tune) step = adapter.final_step_size();
      continue;
    }
    const Vector x = target.constrain(z.q);
    out.samples.insert(out.samples.end(), x.data(), x.data() + x.size());
    out.divergent.push_back(stats.divergent ? 1 : 0);
    out.accept_stat.push_back(stats.accept_stat);
    out.tree_depth.push_back(stats.tree_depth);
  }
  out.step_size = step;
  return out;
}

}  // namespace

Trace run_chains(const LogDensityTarget& target, const SamplerConfig& config) {
  config.validate();
  std::vector<ChainOutput> outputs(config.chains);
  parallel_for(
      config.chains, [&](std::size_t c) { outputs[c] = run_chain(target, config, c); },
      config.threads == 0 ? default_thread_count() : config.threads);

  Trace trace;
  trace.names = target.parameter_names();
  trace.chains = config.chains;
  trace.draws = config.draws;
  for (std::size_t c = 0; c < config.chains; ++c) {
    auto& o = outputs[c];
    trace.samples.insert(trace.samples.end(), o.samples.begin(), o.samples.end());
    trace.divergent.insert(trace.divergent.end(), o.divergent.begin(), o.divergent.end());
    trace.accept_stat.insert(trace.accept_stat.end(), o.accept_stat.begin(), o.accept_stat.end());
    trace.tree_depth.insert(trace.tree_depth.end(), o.tree_depth.begin(), o.tree_depth.end());
    trace.step_sizes.push_back(o.step_size);
    const auto n_div =
        static_cast<std::size_t>(std::count(o.divergent.begin(), o.divergent.end(), 1));
    if (n_div == config.draws) {
      throw ConvergenceError("chain " + std::to_string(c) +
                             " diverged on every draw; consider reparameterizing or widening "
                             "priors");
    }
    if (10 * n_div > config.draws) {
      trace.warnings.push_back("chain " + std::to_string(c) + ": " + std::to_string(n_div) +
                               " of " + std::to_string(config.draws) + " draws divergent");
    }
  }
  return trace;
}

std::vector<Vector> dirichlet_direct_sample(const Vector& alpha, std::size_t n_draws,
                                            Philox4x32& rng) {
  const Eigen::Index k = alpha.size();
  for (Eigen::Index i = 0; i < k; ++i)
    if (!(alpha[i] > 0.0)) throw std::invalid_argument("Dirichlet alpha must be positive");
  std::vector<std::gamma_distribution<double>> gammas;
  gammas.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) gammas.emplace_back(alpha[i] + 1.0, 1.0);

  std::vector<Vector> out;
  out.reserve(n_draws);
  Vector log_g(k);
  for (std::size_t d = 0; d < n_draws; ++d) {
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    for (Eigen::Index i = 0; i < k; ++i) {
      const double g = gammas[static_cast<std::size_t>(i)](rng);
      log_g[i] = std::log(g) + std::log(rng.uniform()) / alpha[i];
    }
    const double m = log_g.maxCoeff();
    Vector x = (log_g.array() - m).exp();
    x /= x.sum();
    out.push_back(std::move(x));
  }
  return out;
}

std::string trace_to_csv(const Trace& trace) {
  std::string out = "chain,draw,param,value\n";
  out.reserve(trace.samples.size() * 24);
  for (std::size_t c = 0; c < trace.chains; ++c)
    for (std::size_t d = 0; d < trace.draws; ++d)
      for (std::size_t p = 0; p < trace.dimension(); ++p) {
        out += std::to_string(c);
        out += ',';
        out += std::to_string(d);
        out += ',';
        out += trace.names[p];
        out += ',';
        out += format_double(trace.at(c, d, p));
        out += '\n';
      }
  return out;
}

Trace trace_from_csv(std::string_view text) {
  struct Entry {
    std::size_t chain, draw, param;
    double value;
  };
  std::vector<Entry> entries;
  std::vector<std::string> names;
  std::map<std::string, std::size_t, std::less<>> name_index;
  std::size_t pos = text.find('\n');
  if (pos == std::string_view::npos || text.substr(0, pos) != "chain,draw,param,value")
    throw DataError("trace CSV: bad header");
  ++pos;
  std::size_t line_no = 1;
  std::size_t max_chain = 0, max_draw = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::size_t c1 = line.find(','), c3 = line.rfind(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos || c3 <= c2)
      throw DataError("trace CSV line " + std::to_string(line_no) + ": expected 4 fields");
    Entry e{};
    auto parse_uint = [&](std::string_view f, std::size_t& v) {
      if (std::from_chars(f.data(), f.data() + f.size(), v).ec != std::errc())
        throw DataError("trace CSV line " + std::to_string(line_no) + ": bad integer");
    };
    parse_uint(line.substr(0, c1), e.chain);
    parse_uint(line.substr(c1 + 1, c2 - c1 - 1), e.draw);
    const std::string_view name = line.substr(c2 + 1, c3 - c2 - 1);
    const std::string_view value = line.substr(c3 + 1);
    if (std::from_chars(value.data(), value.data() + value.size(), e.value).ec != std::errc())
      throw DataError("trace CSV line " + std::to_string(line_no) + ": bad value");
    auto it = name_index.find(name);
    if (it == name_index.end()) {
      it = name_index.emplace(std::string(name), names.size()).first;
      names.emplace_back(name);
    }
    e.param = it->second;
    max_chain = std::max(max_chain, e.chain);
    max_draw = std::max(max_draw, e.draw);
    entries.push_back(e);
  }
  Trace t;
  t.names = names;
  if (entries.empty()) return t;
  t.chains = max_chain + 1;
  t.draws = max_draw + 1;
  if (entries.size() != t.chains * t.draws * names.size())
    throw DataError("trace CSV: incomplete chain/draw/param grid");
  t.samples.assign(entries.size(), 0.0);
  for (const auto& e : entries) t.samples[(e.chain * t.draws + e.draw) * names.size() + e.param] = e.value;
  t.divergent.assign(t.chains * t.draws, 0);
  return t;
}

std::string trace_to_json(const Trace& trace) {
  nlohmann::json doc;
  doc["names"] = trace.names;
  doc["chains"] = trace.chains;
  doc["draws"] = trace.draws;
  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t c = 0; c < trace.chains; ++c) {
    nlohmann::json params = nlohmann::json::object();
    for (std::size_t p = 0; p < trace.dimension(); ++p)
      params[trace.names[p]] = trace.chain_draws(c, p);
    chains.push_back(std::move(params));
  }
  doc["samples"] = std::move(chains);
  doc["step_sizes"] = trace.step_sizes;
  doc["warnings"] = trace.warnings;
  return doc.dump() + "\n";
}

std::string divergence_report_json(const Trace& trace) {
  nlohmann::json doc;
  doc["total_divergent"] = trace.divergence_count();
  nlohmann::json per_chain = nlohmann::json::array();
  for (std::size_t c = 0; c < trace.chains; ++c) {
    std::vector<std::size_t> flagged;
    for (std::size_t d = 0; d < trace.draws; ++d)
      if (trace.divergent[c * trace.draws + d]) flagged.push_back(d);
    nlohmann::json entry = {{"chain", c}, {"divergent", flagged.size()}, {"draws", flagged}};
    if (c < trace.step_sizes.size()) entry["step_size"] = trace.step_sizes[c];
    per_chain.push_back(std::move(entry));
  }
  doc["chains"] = std::move(per_chain);
  doc["warnings"] = trace.warnings;
  return doc.dump(2) + "\n";
}

}  // namespace drm::mcmc
