#include "drm/mcmc/nuts.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "drm/common.hpp"

namespace drm::mcmc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

bool no_u_turn(const Vector& p_sharp_minus, const Vector& p_sharp_plus, const Vector& rho) {
  return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
}

/// Recursive trajectory builder (multinomial NUTS with the generalized
/// U-turn criterion checked on every merged subtree).
class TreeBuilder {
public:
  TreeBuilder(const LogDensityTarget& target, const Metric& metric, double step_size,
              double h0, double log_slice, Philox4x32& rng, const NutsOptions& options)
      : target_(target), metric_(metric), step_(step_size), h0_(h0),
        log_slice_(log_slice), rng_(rng), opts_(options) {}

  bool build(PhasePoint& z, int depth, double sign, PhasePoint& z_propose, Vector& p_sharp_beg,
             Vector& p_sharp_end, Vector& rho, Vector& p_beg, Vector& p_end,
             double& log_sum_weight) {
    if (depth == 0) {
      const bool finite = leapfrog(z, sign * step_, target_, metric_);
      ++n_leapfrog;
      double h = finite ? hamiltonian(z, metric_) : kInf;
      if (std::isnan(h)) h = kInf;
      if (h - h0_ > opts_.max_energy_error) divergent = true;
      const double log_w = opts_.weighting == TreeWeighting::multinomial
                               ? h0_ - h
                               : (log_slice_ < h0_ - h ? 0.0 : -kInf);
      log_sum_weight = log_sum_exp(log_sum_weight, log_w);
      sum_metro_prob += h0_ - h > 0 ? 1.0 : std::exp(h0_ - h);
      z_propose = z;
      p_sharp_beg = metric_.velocity(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = z.p;
      return !divergent;
    }

    const Eigen::Index n = z.q.size();
    double log_sum_weight_init = -kInf;
    Vector p_init_end(n), p_sharp_init_end(n);
    Vector rho_init = Vector::Zero(n);
    if (!build(z, depth - 1, sign, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
               p_init_end, log_sum_weight_init))
      return false;

    PhasePoint z_propose_final = z;
    double log_sum_weight_final = -kInf;
    Vector p_final_beg(n), p_sharp_final_beg(n);
    Vector rho_final = Vector::Zero(n);
    if (!build(z, depth - 1, sign, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
               p_final_beg, p_end, log_sum_weight_final))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (log_sum_weight_final > -kInf) {
      const double accept = std::exp(log_sum_weight_final - log_sum_weight_subtree);
      if (rng_.uniform() < accept) z_propose = z_propose_final;
    }

    const Vector rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  int n_leapfrog = 0;
  double sum_metro_prob = 0.0;
  bool divergent = false;

private:
  const LogDensityTarget& target_;
  const Metric& metric_;
  double step_;
  double h0_;
  double log_slice_;
  Philox4x32& rng_;
  const NutsOptions& opts_;
};

}  // namespace

Metric::Metric(std::size_t dimension, MetricKind kind)
    : kind_(kind), diag_(Vector::Ones(static_cast<Eigen::Index>(dimension))) {
  if (kind == MetricKind::dense) {
    dense_ = Eigen::MatrixXd::Identity(diag_.size(), diag_.size());
    chol_ = dense_;
  }
}

Metric::Metric(const Vector& inv_diagonal) : kind_(MetricKind::diagonal), diag_(inv_diagonal) {}

Metric Metric::dense(const Eigen::MatrixXd& inv_mass) {
  Metric m(static_cast<std::size_t>(inv_mass.rows()), MetricKind::dense);
  const Eigen::LLT<Eigen::MatrixXd> llt(inv_mass);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("dense metric must be symmetric positive definite");
  m.dense_ = inv_mass;
  m.diag_ = inv_mass.diagonal();
  m.chol_ = llt.matrixL();
  return m;
}

Vector Metric::velocity(const Vector& p) const {
  if (kind_ == MetricKind::dense) return dense_ * p;
  return diag_.cwiseProduct(p);
}

void Metric::sample_momentum(Vector& p, Philox4x32& rng) const {
  std::normal_distribution<double> normal;
  const Eigen::Index n = diag_.size();
  p.resize(n);
  if (kind_ == MetricKind::dense) {
    Vector u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[i] = normal(rng);
    // M^{-1} = L L^T, so L^{-T} u has covariance M.
    p = chol_.transpose().triangularView<Eigen::Upper>().solve(u);
    return;
  }
  for (Eigen::Index i = 0; i < n; ++i) p[i] = normal(rng) / std::sqrt(diag_[i]);
}

bool refresh(PhasePoint& z, const LogDensityTarget& target) {
  z.logp = target.log_density(z.q, z.grad);
  return std::isfinite(z.logp) && z.grad.allFinite();
}

bool leapfrog(PhasePoint& z, double step_size, const LogDensityTarget& target,
              const Metric& metric) {
  z.p += 0.5 * step_size * z.grad;
  z.q += step_size * metric.velocity(z.p);
  if (!refresh(z, target)) return false;
  z.p += 0.5 * step_size * z.grad;
  return true;
}

double hamiltonian(const PhasePoint& z, const Metric& metric) {
  return metric.kinetic(z.p) - z.logp;
}

TreeStats nuts_draw(PhasePoint& current, const LogDensityTarget& target, double step_size,
                    const Metric& metric, Philox4x32& rng, const NutsOptions& options) {
  PhasePoint z = current;
  metric.sample_momentum(z.p, rng);
  const double h0 = hamiltonian(z, metric);
  const double log_slice =
      options.weighting == TreeWeighting::slice ? std::log(rng.uniform()) : 0.0;

  PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
  Vector p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
  const Vector p_sharp0 = metric.velocity(z.p);
  Vector p_sharp_fwd_fwd = p_sharp0, p_sharp_fwd_bck = p_sharp0;
  Vector p_sharp_bck_fwd = p_sharp0, p_sharp_bck_bck = p_sharp0;
  Vector rho = z.p;
  double log_sum_weight = 0.0;

  TreeBuilder builder(target, metric, step_size, h0, log_slice, rng, options);
  TreeStats stats;
  const Eigen::Index n = z.q.size();

  while (stats.tree_depth < options.max_tree_depth) {
    Vector rho_fwd = Vector::Zero(n);
    Vector rho_bck = Vector::Zero(n);
    double log_sum_weight_subtree = -kInf;
    bool valid;

    if (rng.uniform() > 0.5) {
      z = z_fwd;
      rho_bck = rho;
      p_bck_fwd = p_fwd_bck;
      p_sharp_bck_fwd = p_sharp_fwd_bck;
      valid = builder.build(z, stats.tree_depth, 1.0, z_propose, p_sharp_fwd_bck,
                            p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                            log_sum_weight_subtree);
      z_fwd = z;
    } else {
      z = z_bck;
      rho_fwd = rho;
      p_fwd_bck = p_bck_fwd;
      p_sharp_fwd_bck = p_sharp_bck_fwd;
      valid = builder.build(z, stats.tree_depth, -1.0, z_propose, p_sharp_bck_fwd,
                            p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                            log_sum_weight_subtree);
      z_bck = z;
    }
    if (!valid) break;
    ++stats.tree_depth;

    if (log_sum_weight_subtree > log_sum_weight) {
      z_sample = z_propose;
    } else if (log_sum_weight_subtree > -kInf) {
      if (rng.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) z_sample = z_propose;
    }
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

    rho = rho_bck + rho_fwd;
    bool persist = no_u_turn(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
    persist = persist && no_u_turn(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
    persist = persist && no_u_turn(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
    if (!persist) break;
  }

  stats.n_leapfrog = builder.n_leapfrog;
  stats.divergent = builder.divergent;
  stats.accept_stat =
      builder.n_leapfrog > 0 ? builder.sum_metro_prob / static_cast<double>(builder.n_leapfrog) : 0.0;
  current.q = z_sample.q;
  current.grad = z_sample.grad;
  current.logp = z_sample.logp;
  current.p = z_sample.p;
  stats.energy = hamiltonian(z_sample, metric);
  return stats;
}

void DualAveraging::restart(double step_size) {
  mu_ = std::log(10.0 * step_size);
  s_bar_ = 0.0;
  x_ = std::log(step_size);
  x_bar_ = 0.0;
  counter_ = 0.0;
}

double DualAveraging::learn(double accept_stat) {
  counter_ += 1.0;
  accept_stat = std::min(1.0, accept_stat);
  const double eta = 1.0 / (counter_ + t0_);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
  x_ = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
  const double x_eta = std::pow(counter_, -kappa_);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x_;
  return std::exp(x_);
}

double DualAveraging::final_step_size() const { return std::exp(x_bar_); }

MetricAdaptation::MetricAdaptation(std::size_t dimension, std::size_t tune, MetricKind kind)
    : tune_(tune), kind_(kind), mean_(Vector::Zero(static_cast<Eigen::Index>(dimension))),
      m2_(Vector::Zero(static_cast<Eigen::Index>(dimension))) {
  if (kind == MetricKind::dense) {
    const auto n = static_cast<Eigen::Index>(dimension);
    m2_dense_ = Eigen::MatrixXd::Zero(n, n);
  }
  if (tune < 20) {
    enabled_ = false;
    return;
  }
  if (init_buffer_ + base_window_ + term_buffer_ > tune) {
    init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(tune));
    term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(tune));
    base_window_ = tune - (init_buffer_ + term_buffer_);
  }
  window_size_ = base_window_;
  next_window_ = init_buffer_ + window_size_ - 1;
}

void MetricAdaptation::compute_next_window() {
  if (next_window_ == tune_ - term_buffer_ - 1) return;
  window_size_ *= 2;
  next_window_ = counter_ + window_size_;
  if (next_window_ != tune_ - term_buffer_ - 1) {
    const std::size_t boundary = next_window_ + 2 * window_size_;
    if (boundary >= tune_ - term_buffer_) next_window_ = tune_ - term_buffer_ - 1;
  }
}

bool MetricAdaptation::observe(const Vector& q, Metric& metric) {
  if (!enabled_) return false;
  const bool in_window = counter_ >= init_buffer_ && counter_ < tune_ - term_buffer_;
  if (in_window) {
    ++n_;
    const Vector delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    if (kind_ == MetricKind::dense)
      m2_dense_ += delta * (q - mean_).transpose();
    else
      m2_ += delta.cwiseProduct(q - mean_);
  }
  if (counter_ == next_window_ && counter_ != tune_) {
    compute_next_window();
    const double n = static_cast<double>(n_);
    const double shrink = 1e-3 * (5.0 / (n + 5.0));
    if (kind_ == MetricKind::dense) {
      const auto d = q.size();
      Eigen::MatrixXd cov = n > 1 ? Eigen::MatrixXd(m2_dense_ / (n - 1.0))
                                  : Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));
      cov = (n / (n + 5.0)) * cov;
      cov.diagonal().array() += shrink;
      metric = Metric::dense(0.5 * (cov + cov.transpose()));
      m2_dense_.setZero();
    } else {
      const Vector var = n > 1 ? Vector(m2_ / (n - 1.0)) : Vector(Vector::Ones(q.size()));
      metric = Metric(Vector((n / (n + 5.0)) * var.array() + shrink));
      m2_.setZero();
    }
    n_ = 0;
    mean_.setZero();
    ++counter_;
    return true;
  }
  ++counter_;
  return false;
}

double find_reasonable_step_size(const PhasePoint& z0, double step_size,
                                 const LogDensityTarget& target, const Metric& metric,
                                 Philox4x32& rng) {
  auto delta_h = [&](double eps) {
    PhasePoint z = z0;
    metric.sample_momentum(z.p, rng);
    const double h0 = hamiltonian(z, metric);
    if (!leapfrog(z, eps, target, metric)) return -kInf;
    const double h = hamiltonian(z, metric);
    return std::isnan(h) ? -kInf : h0 - h;
  };
  const double log_target = std::log(0.8);
  const int direction = delta_h(step_size) > log_target ? 1 : -1;
  for (int iter = 0; iter < 100; ++iter) {
    const double dh = delta_h(step_size);
    if (direction == 1 && !(dh > log_target)) break;
    if (direction == -1 && !(dh < log_target)) break;
    step_size = direction == 1 ? step_size * 2.0 : step_size * 0.5;
    if (step_size > 1e7) throw ConvergenceError("posterior appears improper: step size diverged");
    if (step_size < 1e-300) throw ConvergenceError("no acceptably small step size found");
  }
  return step_size;
}

}  // namespace drm::mcmc
