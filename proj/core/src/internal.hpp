#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "vcm/dataset.hpp"
#include "vcm/error.hpp"

namespace vcm::internal {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Cholesky factor of S_i; identity when the subject carries no correlation.
class Whitener {
 public:
  explicit Whitener(const SubjectRecord& subject) {
    if (subject.correlation.size() == 0) return;
    llt_.compute(subject.correlation);
    if (llt_.info() != Eigen::Success) {
      throw SingularMatrix("correlation matrix of subject '" + subject.id +
                           "' is not positive definite");
    }
    identity_ = false;
  }

  bool identity() const noexcept { return identity_; }

  /// L^{-1} x, so that (L^{-1}x)'(L^{-1}x) = x' S^{-1} x.
  template <typename Derived>
  Eigen::MatrixXd apply(const Eigen::MatrixBase<Derived>& x) const {
    if (identity_) return x;
    return llt_.matrixL().solve(x);
  }

  double log_det() const {
    if (identity_) return 0.0;
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

 private:
  bool identity_ = true;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

}  // namespace vcm::internal
