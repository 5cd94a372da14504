#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "vcm/dataset.hpp"
#include "vcm/model.hpp"

namespace vcm {

enum class InitKind { zeros, ridge };

/// How sigma^2 is re-estimated after each sweep.
enum class Sigma2Rule {
  /// (1/N) sum_i r_i' S_i^{-1} r_i with the full residual; the ML update.
  ml,
  /// Residual leaving out the last-swept term, divided by the number of
  /// subjects. Kept only for comparison; it is not a likelihood maximizer.
  printed,
};

struct FitConfig {
  /// Stop when max_k ||gamma_k(new) - gamma_k(old)||_inf < tol.
  double tol = 1e-8;
  int max_sweeps = 10000;
  double sigma2_floor = 1e-12;
  InitKind init = InitKind::zeros;
  Sigma2Rule sigma2_rule = Sigma2Rule::ml;
  /// Hold sigma^2 at this value instead of estimating it.
  std::optional<double> fixed_sigma2;

  void validate() const;
};

/// Whitened stacked design for one (spec, dataset) pair, plus the Gram
/// blocks the backfitting sweep needs.
///
/// With L_i L_i' = S_i, W = [L_i^{-1} B_i] stacked over subjects and
/// z = [L_i^{-1} y_i]. Then B_i' S_i^{-1} B_j terms become W'W blocks and
/// r_i' S_i^{-1} r_i = ||z_i - W_i gamma||^2.
class NormalEquations {
 public:
  NormalEquations(const ModelSpec& spec, const LongitudinalDataset& data);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t num_subjects() const noexcept { return row_start_.size() - 1; }
  Eigen::Index num_observations() const noexcept { return design_.rows(); }

  const Eigen::MatrixXd& design() const noexcept { return design_; }
  const Eigen::VectorXd& response() const noexcept { return response_; }
  const Eigen::MatrixXd& gram() const noexcept { return gram_; }
  const Eigen::VectorXd& cross() const noexcept { return cross_; }
  Eigen::Index row_start(std::size_t i) const { return row_start_.at(i); }
  Eigen::Index rows_of(std::size_t i) const {
    return row_start_.at(i + 1) - row_start_.at(i);
  }
  /// sum_i log|S_i|.
  double log_det_correlation() const noexcept { return log_det_s_; }

  /// Block update for term k with every other block held at `gamma`:
  /// solves (G_kk / sigma2 + n lambda_k Omega_k) g = (c_k - sum_{l!=k} G_kl gamma_l) / sigma2.
  Eigen::VectorXd step(std::size_t k, const Eigen::VectorXd& gamma,
                       double sigma2, double lambda) const;

  /// Whitened residual z - W gamma.
  Eigen::VectorXd residual(const Eigen::VectorXd& gamma) const;

 private:
  /// Simultaneous diagonalization of (G_kk, Omega_k): with G_kk = L L' and
  /// L^{-1} Omega_k L^{-T} = U diag(eig) U', T = L^{-T} U gives
  /// (G_kk + c Omega_k)^{-1} = T diag(1 / (1 + c eig)) T' for every c >= 0.
  /// Only built when G_kk is well conditioned.
  struct BlockFactor {
    bool diagonalized = false;
    Eigen::MatrixXd transform;
    Eigen::VectorXd eig;
  };

  ModelSpec spec_;
  std::vector<BlockFactor> factors_;
  Eigen::MatrixXd design_;
  Eigen::VectorXd response_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd cross_;
  std::vector<Eigen::Index> row_start_;
  double log_det_s_ = 0.0;
};

/// One backfitting update of gamma_k given the other blocks and sigma^2 of
/// `current`. Throws RankDeficiency when the block system is singular.
Eigen::VectorXd backfit_step(std::size_t k, const FittedModel& current,
                             const ModelSpec& spec,
                             const LongitudinalDataset& data,
                             const Eigen::VectorXd& lambdas);

/// sigma^2 re-estimate for the coefficients in `current`, clamped below at
/// config.sigma2_floor.
double update_sigma2(const FittedModel& current, const ModelSpec& spec,
                     const LongitudinalDataset& data,
                     const FitConfig& config = {});

/// Backfitting for the penalized likelihood. Non-convergence is reported on
/// the result, not thrown.
FittedModel fit(const ModelSpec& spec, const LongitudinalDataset& data,
                const Eigen::VectorXd& lambdas, const FitConfig& config = {});

/// Same as above with a prebuilt system (reused across lambda grids).
FittedModel fit(const NormalEquations& system, const Eigen::VectorXd& lambdas,
                const FitConfig& config = {});

}  // namespace vcm
