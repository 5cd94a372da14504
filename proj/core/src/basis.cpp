#include "vcm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vcm/error.hpp"

namespace vcm {

BSplineBasis::BSplineBasis(double t_min, double t_max, int order,
                           std::vector<double> interior_knots)
    : t_min_(t_min),
      t_max_(t_max),
      order_(order),
      size_(static_cast<int>(interior_knots.size()) + order + 1),
      interior_(std::move(interior_knots)) {
  if (!std::isfinite(t_min) || !std::isfinite(t_max) || !(t_min < t_max)) {
    throw InvalidArgument("B-spline interval must satisfy t_min < t_max");
  }
  if (order < 0) {
    throw InvalidArgument("B-spline order must be nonnegative");
  }
  double prev = t_min;
  for (double k : interior_) {
    if (!(k > prev) || !(k < t_max)) {
      throw InvalidArgument(
          "interior knots must be strictly increasing inside (t_min, t_max)");
    }
    prev = k;
  }
  knots_.reserve(interior_.size() + 2 * (order_ + 1));
  knots_.insert(knots_.end(), order_ + 1, t_min_);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), order_ + 1, t_max_);
}

int BSplineBasis::evaluate_local(double t, std::span<double> values) const {
  const int p = order_;
  if (std::isnan(t)) throw InvalidArgument("cannot evaluate basis at NaN");
  t = std::clamp(t, t_min_, t_max_);

  // Knot span s with knots[s] <= t < knots[s+1]; the last span is closed.
  int span;
  if (t >= t_max_) {
    span = size_ - 1;
  } else {
    auto it = std::upper_bound(knots_.begin() + p, knots_.begin() + size_ + 1, t);
    span = static_cast<int>(it - knots_.begin()) - 1;
  }

  // Triangular Cox-de Boor scheme, in place.
  std::vector<double> left(p + 1), right(p + 1);
  values[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[span + 1 - j];
    right[j] = knots_[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double tmp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    values[j] = saved;
  }
  return span - p;
}

Eigen::VectorXd BSplineBasis::evaluate(double t) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size_);
  std::vector<double> local(order_ + 1);
  const int first = evaluate_local(t, local);
  for (int r = 0; r <= order_; ++r) out[first + r] = local[r];
  return out;
}

BSplineBasis make_uniform_basis(double t_min, double t_max, int num_basis,
                                int order) {
  if (order < 0) throw InvalidArgument("B-spline order must be nonnegative");
  if (num_basis < order + 1) {
    throw InvalidArgument("number of basis functions " +
                          std::to_string(num_basis) + " is below order + 1 = " +
                          std::to_string(order + 1));
  }
  if (!std::isfinite(t_min) || !std::isfinite(t_max) || !(t_min < t_max)) {
    throw InvalidArgument("degenerate basis interval");
  }
  const int segments = num_basis - order;
  std::vector<double> interior;
  interior.reserve(segments - 1);
  const double width = t_max - t_min;
  for (int s = 1; s < segments; ++s) {
    interior.push_back(t_min + width * s / segments);
  }
  return BSplineBasis(t_min, t_max, order, std::move(interior));
}

Eigen::MatrixXd basis_matrix(const BSplineBasis& basis,
                             std::span<const double> times) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(times.size()), basis.size());
  std::vector<double> local(basis.order() + 1);
  for (std::size_t j = 0; j < times.size(); ++j) {
    const int first = basis.evaluate_local(times[j], local);
    for (int r = 0; r <= basis.order(); ++r) {
      out(static_cast<Eigen::Index>(j), first + r) = local[r];
    }
  }
  return out;
}

}  // namespace vcm
