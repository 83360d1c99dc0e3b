#include "drm/mcmc/target.hpp"

#include <cmath>
#include <stdexcept>

namespace drm::mcmc {

namespace {

double log1p_exp(double a) { return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

double logistic(double u) {
  return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

std::vector<std::string> indexed_names(std::size_t n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back("theta[" + std::to_string(i) + "]");
  return names;
}

}  // namespace

std::vector<std::string> LogDensityTarget::parameter_names() const {
  return indexed_names(constrained_dimension());
}

std::vector<std::string> ConstrainedModel::parameter_names() const {
  return indexed_names(dimension());
}

double stick_breaking_forward(const double* y, std::size_t k, double* x) {
  double remaining = 1.0;
  double log_remaining = 0.0;
  double log_jac = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double u = y[i] - std::log(static_cast<double>(k - 1 - i));
    const double z = logistic(u);
    // log z + log(1 - z) + log remaining
    log_jac += -log1p_exp(-u) - log1p_exp(u) + log_remaining;
    x[i] = remaining * z;
    remaining *= 1.0 - z;
    log_remaining += -log1p_exp(u);
  }
  x[k - 1] = remaining;
  return log_jac;
}

void stick_breaking_inverse(const double* x, std::size_t k, double* y) {
  double remaining = 1.0;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double z = x[i] / remaining;
    y[i] = std::log(z) - std::log1p(-z) + std::log(static_cast<double>(k - 1 - i));
    remaining -= x[i];
  }
}

TransformedTarget::TransformedTarget(std::shared_ptr<const ConstrainedModel> model,
                                     std::vector<Transform> transforms)
    : model_(std::move(model)), transforms_(std::move(transforms)) {
  for (const auto& t : transforms_) {
    if (t.size == 0) throw std::invalid_argument("transform block of size 0");
    if (t.kind == TransformKind::simplex && t.size < 2)
      throw std::invalid_argument("simplex block needs at least 2 coordinates");
    if (t.kind == TransformKind::interval && !(t.lower < t.upper))
      throw std::invalid_argument("interval transform needs lower < upper");
    unconstrained_dim_ += t.unconstrained_size();
    constrained_dim_ += t.size;
  }
  if (constrained_dim_ != model_->dimension())
    throw std::invalid_argument("transforms do not cover the model dimension");
}

Vector TransformedTarget::constrain(const Vector& y) const {
  Vector x(constrained_dim_);
  std::size_t iy = 0, ix = 0;
  for (const auto& t : transforms_) {
    switch (t.kind) {
      case TransformKind::unbounded:
        for (std::size_t j = 0; j < t.size; ++j) x[ix + j] = y[iy + j];
        break;
      case TransformKind::positive:
        for (std::size_t j = 0; j < t.size; ++j) x[ix + j] = std::exp(y[iy + j]);
        break;
      case TransformKind::interval:
        for (std::size_t j = 0; j < t.size; ++j)
          x[ix + j] = t.lower + (t.upper - t.lower) * logistic(y[iy + j]);
        break;
      case TransformKind::simplex:
        stick_breaking_forward(y.data() + iy, t.size, x.data() + ix);
        break;
    }
    iy += t.unconstrained_size();
    ix += t.size;
  }
  return x;
}

Vector TransformedTarget::unconstrain(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != constrained_dim_)
    throw std::invalid_argument("unconstrain: wrong dimension");
  Vector y(unconstrained_dim_);
  std::size_t iy = 0, ix = 0;
  for (const auto& t : transforms_) {
    switch (t.kind) {
      case TransformKind::unbounded:
        for (std::size_t j = 0; j < t.size; ++j) y[iy + j] = x[ix + j];
        break;
      case TransformKind::positive:
        for (std::size_t j = 0; j < t.size; ++j) y[iy + j] = std::log(x[ix + j]);
        break;
      case TransformKind::interval:
        for (std::size_t j = 0; j < t.size; ++j) {
          const double z = (x[ix + j] - t.lower) / (t.upper - t.lower);
          y[iy + j] = std::log(z) - std::log1p(-z);
        }
        break;
      case TransformKind::simplex:
        stick_breaking_inverse(x.data() + ix, t.size, y.data() + iy);
        break;
    }
    iy += t.unconstrained_size();
    ix += t.size;
  }
  return y;
}

double TransformedTarget::log_abs_det_jacobian(const Vector& y) const {
  double total = 0.0;
  std::size_t iy = 0;
  std::vector<double> scratch;
  for (const auto& t : transforms_) {
    switch (t.kind) {
      case TransformKind::unbounded:
        break;
      case TransformKind::positive:
        for (std::size_t j = 0; j < t.size; ++j) total += y[iy + j];
        break;
      case TransformKind::interval:
        for (std::size_t j = 0; j < t.size; ++j) {
          const double u = y[iy + j];
          total += std::log(t.upper - t.lower) - log1p_exp(-u) - log1p_exp(u);
        }
        break;
      case TransformKind::simplex:
        scratch.resize(t.size);
        total += stick_breaking_forward(y.data() + iy, t.size, scratch.data());
        break;
    }
    iy += t.unconstrained_size();
  }
  return total;
}

double TransformedTarget::log_density(const Vector& y, Vector& grad) const {
  const Vector x = constrain(y);
  Vector grad_x;
  double lp = model_->log_density(x, grad_x);
  grad.resize(static_cast<Eigen::Index>(unconstrained_dim_));
  std::size_t iy = 0, ix = 0;
  for (const auto& t : transforms_) {
    switch (t.kind) {
      case TransformKind::unbounded:
        for (std::size_t j = 0; j < t.size; ++j) grad[iy + j] = grad_x[ix + j];
        break;
      case TransformKind::positive:
        for (std::size_t j = 0; j < t.size; ++j) {
          lp += y[iy + j];
          grad[iy + j] = grad_x[ix + j] * x[ix + j] + 1.0;
        }
        break;
      case TransformKind::interval:
        for (std::size_t j = 0; j < t.size; ++j) {
          const double u = y[iy + j];
          const double z = logistic(u);
          lp += std::log(t.upper - t.lower) - log1p_exp(-u) - log1p_exp(u);
          grad[iy + j] = grad_x[ix + j] * (t.upper - t.lower) * z * (1.0 - z) + 1.0 - 2.0 * z;
        }
        break;
      case TransformKind::simplex: {
        const std::size_t k = t.size;
        // Forward pass: remaining mass r_i and stick fractions z_i.
        std::vector<double> r(k), z(k - 1);
        r[0] = 1.0;
        for (std::size_t i = 0; i + 1 < k; ++i) {
          const double u = y[iy + i] - std::log(static_cast<double>(k - 1 - i));
          z[i] = logistic(u);
          lp += -log1p_exp(-u) - log1p_exp(u) + std::log(r[i]);
          r[i + 1] = r[i] * (1.0 - z[i]);
        }
        // Reverse pass. adj_r carries d(total)/d r_{i+1}; x_K = r_K.
        double adj_r = grad_x[ix + k - 1];
        for (std::size_t i = k - 1; i-- > 0;) {
          const double g = grad_x[ix + i];
          grad[iy + i] = r[i] * (g - adj_r) * z[i] * (1.0 - z[i]) + 1.0 - 2.0 * z[i];
          adj_r = g * z[i] + adj_r * (1.0 - z[i]) + 1.0 / r[i];
        }
        break;
      }
    }
    iy += t.unconstrained_size();
    ix += t.size;
  }
  return lp;
}

std::vector<std::string> TransformedTarget::parameter_names() const {
  return model_->parameter_names();
}

}  // namespace drm::mcmc
