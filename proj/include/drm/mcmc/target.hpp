#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace drm::mcmc {

using Vector = Eigen::VectorXd;

/// Unnormalized log density on R^n together with its gradient.
///
/// Implementations must be safe to evaluate concurrently from several
/// threads: log_density is const and may not touch shared mutable state.
class LogDensityTarget {
public:
  virtual ~LogDensityTarget() = default;

  /// Dimension of the unconstrained space the sampler moves in.
  virtual std::size_t dimension() const = 0;

  /// log p(theta); writes d log p / d theta into grad (resized by callee).
  virtual double log_density(const Vector& theta, Vector& grad) const = 0;

  /// Size of the vector recorded in traces (differs from dimension() for
  /// simplex blocks).
  virtual std::size_t constrained_dimension() const { return dimension(); }
  virtual Vector constrain(const Vector& theta) const { return theta; }
  virtual std::vector<std::string> parameter_names() const;

  /// Preferred starting point; samplers draw Uniform(-2, 2) otherwise.
  virtual std::optional<Vector> initial_point() const { return std::nullopt; }
};

enum class TransformKind { unbounded, positive, interval, simplex };

/// Maps a block of constrained coordinates to unconstrained ones.
///   unbounded: identity
///   positive:  x = exp(y)
///   interval:  x = lower + (upper - lower) * logistic(y)
///   simplex:   stick-breaking, K constrained <-> K-1 unconstrained
struct Transform {
  TransformKind kind = TransformKind::unbounded;
  std::size_t size = 1;  // constrained length of the block
  double lower = 0.0;
  double upper = 1.0;

  static Transform unbounded(std::size_t n = 1) { return {TransformKind::unbounded, n, 0, 0}; }
  static Transform positive(std::size_t n = 1) { return {TransformKind::positive, n, 0, 0}; }
  static Transform interval(double a, double b, std::size_t n = 1) {
    return {TransformKind::interval, n, a, b};
  }
  static Transform simplex(std::size_t k) { return {TransformKind::simplex, k, 0, 1}; }

  std::size_t unconstrained_size() const {
    return kind == TransformKind::simplex ? size - 1 : size;
  }
};

/// y -> x for one simplex block; returns log|J|.
double stick_breaking_forward(const double* y, std::size_t k, double* x);
/// x -> y for one simplex block (x must be strictly inside the simplex).
void stick_breaking_inverse(const double* x, std::size_t k, double* y);

/// A density over constrained parameters with its gradient in those
/// coordinates. Wrapped by TransformedTarget for sampling.
class ConstrainedModel {
public:
  virtual ~ConstrainedModel() = default;
  virtual std::size_t dimension() const = 0;
  virtual double log_density(const Vector& x, Vector& grad_x) const = 0;
  virtual std::vector<std::string> parameter_names() const;
};

/// Presents a ConstrainedModel on R^n: adds log-Jacobian terms and applies
/// the chain rule to gradients.
class TransformedTarget final : public LogDensityTarget {
public:
  TransformedTarget(std::shared_ptr<const ConstrainedModel> model,
                    std::vector<Transform> transforms);

  std::size_t dimension() const override { return unconstrained_dim_; }
  double log_density(const Vector& y, Vector& grad) const override;
  std::size_t constrained_dimension() const override { return constrained_dim_; }
  Vector constrain(const Vector& y) const override;
  std::vector<std::string> parameter_names() const override;
  std::optional<Vector> initial_point() const override { return initial_; }

  Vector unconstrain(const Vector& x) const;
  /// Sum of log-Jacobian terms at y.
  double log_abs_det_jacobian(const Vector& y) const;

  void set_initial_constrained(const Vector& x) { initial_ = unconstrain(x); }
  const ConstrainedModel& model() const { return *model_; }

private:
  std::shared_ptr<const ConstrainedModel> model_;
  std::vector<Transform> transforms_;
  std::size_t unconstrained_dim_ = 0;
  std::size_t constrained_dim_ = 0;
  std::optional<Vector> initial_;
};

}  // namespace drm::mcmc
