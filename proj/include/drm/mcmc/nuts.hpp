#pragma once

#include <cstddef>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "drm/mcmc/target.hpp"
#include "drm/rng.hpp"

namespace drm::mcmc {

/// Position, momentum and the cached density/gradient at the position.
struct PhasePoint {
  Vector q;
  Vector p;
  Vector grad;
  double logp = 0.0;
};

enum class MetricKind { diagonal, dense };

/// Euclidean metric for the kinetic energy, stored as the inverse mass
/// matrix (an estimate of the posterior covariance).
class Metric {
public:
  /// Identity metric.
  explicit Metric(std::size_t dimension = 0, MetricKind kind = MetricKind::diagonal);
  /// Diagonal metric from inverse-mass entries.
  Metric(const Vector& inv_diagonal);  // NOLINT: implicit on purpose
  static Metric dense(const Eigen::MatrixXd& inv_mass);

  MetricKind kind() const { return kind_; }
  std::size_t dimension() const { return static_cast<std::size_t>(diag_.size()); }
  /// dq/dt = M^{-1} p.
  Vector velocity(const Vector& p) const;
  double kinetic(const Vector& p) const { return 0.5 * p.dot(velocity(p)); }
  /// p ~ N(0, M).
  void sample_momentum(Vector& p, Philox4x32& rng) const;

  const Vector& inv_diagonal() const { return diag_; }
  const Eigen::MatrixXd& inv_dense() const { return dense_; }

private:
  MetricKind kind_ = MetricKind::diagonal;
  Vector diag_;
  Eigen::MatrixXd dense_;
  Eigen::MatrixXd chol_;  // lower Cholesky factor of M^{-1}
};

/// Evaluates logp and gradient at z.q. Returns false if either is non-finite.
bool refresh(PhasePoint& z, const LogDensityTarget& target);

/// One leapfrog step: half momentum step,
/// full position step, half momentum step. Returns false (and leaves z in
/// the rejected state) when the new density or gradient is non-finite.
bool leapfrog(PhasePoint& z, double step_size, const LogDensityTarget& target,
              const Metric& metric);

/// Kinetic + potential energy.
double hamiltonian(const PhasePoint& z, const Metric& metric);

enum class TreeWeighting {
  multinomial,  // leaves weighted by exp(-H)
  slice,        // leaves weighted by the slice indicator 1{u < exp(-H)}
};

struct NutsOptions {
  int max_tree_depth = 10;
  double max_energy_error = 1000.0;
  TreeWeighting weighting = TreeWeighting::multinomial;
};

struct TreeStats {
  double accept_stat = 0.0;  // mean Metropolis probability over the trajectory
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
};

/// One No-U-Turn transition from `current` (a fully refreshed phase point
/// whose momentum is ignored). Tree building stops at a generalized U-turn,
/// at max_tree_depth, or at a divergent subtree; on divergence the sample
/// drawn from the valid part of the trajectory is kept.
TreeStats nuts_draw(PhasePoint& current, const LogDensityTarget& target, double step_size,
                    const Metric& metric, Philox4x32& rng, const NutsOptions& options = {});

/// Nesterov dual averaging of log step size toward a target acceptance
/// statistic (gamma = 0.05, t0 = 10, kappa = 0.75).
class DualAveraging {
public:
  explicit DualAveraging(double target_accept = 0.8) : delta_(target_accept) {}

  /// Resets the recursion with mu = log(10 * step_size).
  void restart(double step_size);
  /// Feeds one acceptance statistic; returns the next step size.
  double learn(double accept_stat);
  /// Step size to freeze after tuning: exp(x_bar).
  double final_step_size() const;

  double log_step() const { return x_; }
  double log_step_bar() const { return x_bar_; }

private:
  double delta_;
  double gamma_ = 0.05;
  double t0_ = 10.0;
  double kappa_ = 0.75;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_ = 0.0;
  double x_bar_ = 0.0;
  double counter_ = 0.0;
};

/// Windowed schedule for metric estimation during tuning: an initial fast
/// buffer (identity metric), doubling slow windows, and a terminal fast
/// buffer (75 / 25 / 50 iterations, scaled to 15% / 75% / 10%
/// when tuning is short).
class MetricAdaptation {
public:
  MetricAdaptation(std::size_t dimension, std::size_t tune,
                   MetricKind kind = MetricKind::diagonal);

  /// Records q (if inside a slow window). Returns true when a window just
  /// closed; `metric` then holds the regularized (co)variance estimate.
  bool observe(const Vector& q, Metric& metric);

private:
  void compute_next_window();

  std::size_t tune_;
  MetricKind kind_;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t base_window_ = 25;
  std::size_t counter_ = 0;
  std::size_t window_size_ = 0;
  std::size_t next_window_ = 0;
  bool enabled_ = true;
  // Welford accumulators
  std::size_t n_ = 0;
  Vector mean_;
  Vector m2_;
  Eigen::MatrixXd m2_dense_;
};

/// Doubles or halves step_size until a single leapfrog step crosses an
/// acceptance probability of 0.8. `z` must be refreshed.
double find_reasonable_step_size(const PhasePoint& z, double step_size,
                                 const LogDensityTarget& target, const Metric& metric,
                                 Philox4x32& rng);

}  // namespace drm::mcmc
