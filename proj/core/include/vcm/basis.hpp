#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace vcm {

/// Clamped B-spline basis on a closed interval.
///
/// `order` is the polynomial degree (order 1 = piecewise-linear hats, the
/// convention of "one-order (linear) B-splines"). The full knot vector repeats
/// each boundary knot `order + 1` times, so
///
///     M = interior_knots.size() + order + 1.
///
/// Evaluation clamps t to [t_min, t_max]. Basis functions are nonnegative,
/// locally supported and sum to one everywhere on the interval.
class BSplineBasis {
 public:
  BSplineBasis(double t_min, double t_max, int order,
               std::vector<double> interior_knots);

  int order() const noexcept { return order_; }
  int size() const noexcept { return size_; }
  double t_min() const noexcept { return t_min_; }
  double t_max() const noexcept { return t_max_; }
  const std::vector<double>& interior_knots() const noexcept {
    return interior_;
  }
  /// Full clamped knot vector (length M + order + 1).
  const std::vector<double>& knots() const noexcept { return knots_; }

  /// Values of all M basis functions at t.
  Eigen::VectorXd evaluate(double t) const;

  /// Index of the first nonzero function at t and the order + 1 values
  /// starting there. Used by the dense evaluators.
  int evaluate_local(double t, std::span<double> values) const;

  friend bool operator==(const BSplineBasis&, const BSplineBasis&) = default;

 private:
  double t_min_;
  double t_max_;
  int order_;
  int size_;
  std::vector<double> interior_;
  std::vector<double> knots_;
};

/// Equally spaced interior knots giving exactly `num_basis` functions.
BSplineBasis make_uniform_basis(double t_min, double t_max, int num_basis,
                                int order);

inline Eigen::VectorXd evaluate_basis(const BSplineBasis& basis, double t) {
  return basis.evaluate(t);
}

/// Row j holds evaluate_basis(basis, times[j]).
Eigen::MatrixXd basis_matrix(const BSplineBasis& basis,
                             std::span<const double> times);

}  // namespace vcm
