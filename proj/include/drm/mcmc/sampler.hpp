#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "drm/mcmc/nuts.hpp"
#include "drm/mcmc/target.hpp"
#include "drm/rng.hpp"

namespace drm::mcmc {

struct SamplerConfig {
  std::size_t draws = 1000;
  std::size_t tune = 1000;
  std::size_t chains = 4;
  std::uint64_t seed = 0;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  double max_energy_error = 1000.0;
  TreeWeighting weighting = TreeWeighting::multinomial;
  bool adapt_metric = true;
  MetricKind metric = MetricKind::diagonal;
  /// Worker threads for chains; 0 = default_thread_count().
  std::size_t threads = 0;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

nlohmann::json config_to_json(const SamplerConfig& config);
/// Missing keys keep the values of `defaults`.
SamplerConfig config_from_json(const nlohmann::json& doc, SamplerConfig defaults = {});

/// Score model defaults: 5000 kept draws after 1000 tuning draws, 4 chains.
SamplerConfig score_sampler_defaults();
/// Behaviour model defaults: 2000 kept draws after 1000 tuning draws, 4 chains,
/// dense metric (the regression posterior is strongly correlated).
SamplerConfig glm_sampler_defaults();

/// Post-tuning draws in constrained coordinates, laid out
/// [chain][draw][parameter].
struct Trace {
  std::vector<std::string> names;
  std::size_t chains = 0;
  std::size_t draws = 0;
  std::vector<double> samples;
  std::vector<std::uint8_t> divergent;  // [chain][draw]
  std::vector<double> accept_stat;      // [chain][draw]
  std::vector<int> tree_depth;          // [chain][draw]
  std::vector<double> step_sizes;       // per chain, frozen after tuning
  std::vector<std::string> warnings;

  std::size_t dimension() const { return names.size(); }
  double at(std::size_t chain, std::size_t draw, std::size_t param) const {
    return samples[(chain * draws + draw) * names.size() + param];
  }
  /// Draws of one parameter for one chain.
  std::vector<double> chain_draws(std::size_t chain, std::size_t param) const;
  /// Draws of one parameter, chains concatenated in order.
  std::vector<double> pooled_draws(std::size_t param) const;
  std::size_t divergence_count() const;
  std::size_t index_of(std::string_view name) const;
};

/// Runs `config.chains` independent NUTS chains. Chain c uses
/// Philox4x32(seed + c, 0), so identical (target, config) give identical
/// traces regardless of thread scheduling. Throws ConvergenceError when a
/// chain diverges on every kept draw.
Trace run_chains(const LogDensityTarget& target, const SamplerConfig& config);

/// Draws from Dirichlet(alpha) by normalizing independent Gamma(alpha_i, 1)
/// variates (computed in log space so tiny alpha cannot underflow).
std::vector<Vector> dirichlet_direct_sample(const Vector& alpha, std::size_t n_draws,
                                            Philox4x32& rng);

/// Long format `chain,draw,param,value`.
std::string trace_to_csv(const Trace& trace);
Trace trace_from_csv(std::string_view text);
std::string trace_to_json(const Trace& trace);
/// Divergence sidecar: per-chain counts, step sizes, flagged draw indices.
std::string divergence_report_json(const Trace& trace);

}  // namespace drm::mcmc
