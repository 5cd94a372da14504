#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcm/dataset.hpp"
#include "vcm/estimation.hpp"
#include "vcm/model.hpp"

namespace vcm {

enum class Criterion { gic, gbic, cv };

std::string to_string(Criterion c);
Criterion parse_criterion(const std::string& name);

enum class GbicVariant {
  /// The closed form as published: no log(lambda) terms.
  printed,
  /// Laplace approximation reassembled from the Gaussian prior; adds
  /// -sum_k rank(Omega_k) log(lambda_k) to the printed form.
  rederived,
};

/// Curvature pieces for GIC and GBIC. Parameter order: gamma_0..gamma_K
/// stacked, then sigma^2 (omitted when sigma^2 was held fixed).
///
///   R = -(1/n) sum_i d^2 l_lambda^(i) / dtheta dtheta'
///   Q = (1/n) sum_i (d l_lambda^(i) / dtheta)(d l^(i) / dtheta)'
///
/// with l_lambda^(i) = l^(i) - (1/2) sum_k lambda_k gamma_k' Omega_k gamma_k,
/// so that sum_i l_lambda^(i) is the penalized log-likelihood.
Eigen::MatrixXd compute_R(const FittedModel& model, const ModelSpec& spec,
                          const LongitudinalDataset& data);
/// Mixed outer product as defined above; not symmetric in general.
Eigen::MatrixXd compute_Q_raw(const FittedModel& model, const ModelSpec& spec,
                              const LongitudinalDataset& data);
/// (Q_raw + Q_raw') / 2.
Eigen::MatrixXd compute_Q(const FittedModel& model, const ModelSpec& spec,
                          const LongitudinalDataset& data);

/// Dimension of theta: sum_k M_k, plus one when sigma^2 is estimated.
Eigen::Index parameter_dimension(const FittedModel& model, const ModelSpec& spec);

/// tr(R^{-1} Q) via an LU solve.
double gic_trace(const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q);

/// -2 l(theta_hat) + 2 tr(R^{-1} Q).
double gic(const FittedModel& model, const ModelSpec& spec,
           const LongitudinalDataset& data);

/// Rank and log pseudo-determinant of a PSD penalty (relative cutoff 1e-10).
struct PenaltySpectrum {
  int rank = 0;
  double log_det = 0.0;
};
PenaltySpectrum penalty_spectrum(const Eigen::MatrixXd& omega);

/// log|R| (absolute determinant); throws SingularMatrix if R is singular.
double log_abs_det(const Eigen::MatrixXd& R);

/// -2 l + n sum lambda_k g'Omega g - (sum r_k + 1) log 2pi + (sum r_k + 1) log n
///   - sum log|Omega_k| + log|R|,   r_k = M_k - rank(Omega_k).
/// Unpenalized terms enter with r_k = M_k and no Omega contribution; the "+1"
/// counts sigma^2 and is dropped when sigma^2 was held fixed.
double gbic(const FittedModel& model, const ModelSpec& spec,
            const LongitudinalDataset& data,
            GbicVariant variant = GbicVariant::printed);

/// Subjects assigned to folds by a seeded shuffle; fold f holds the
/// subjects at shuffled positions f, f + folds, ...
std::vector<std::vector<std::size_t>> make_folds(std::size_t num_subjects,
                                                 int folds, std::uint64_t seed);

/// Mean held-out squared prediction error over all observations, folding
/// over subjects. +infinity when any fold fit fails.
double cv_score(const ModelSpec& spec, const LongitudinalDataset& data,
                const Eigen::VectorXd& lambdas, int folds,
                const FitConfig& config, std::uint64_t seed);

struct CriterionReport {
  Criterion criterion = Criterion::gic;
  /// Full per-term lambda vectors (zeros at unpenalized terms).
  std::vector<Eigen::VectorXd> grid;
  std::vector<double> values;
  std::vector<bool> converged;
  /// grid.size() when no point produced a finite value.
  std::size_t best_index = 0;

  bool has_best() const noexcept { return best_index < grid.size(); }
  const Eigen::VectorXd& best_lambdas() const { return grid.at(best_index); }
};

struct SelectOptions {
  int folds = 5;
  std::uint64_t seed = 42;
  GbicVariant gbic_variant = GbicVariant::printed;
  int threads = 1;
};

/// Log-spaced values lo..hi shared by every penalized term.
struct LambdaAxis {
  double lo = 1e-6;
  double hi = 1e2;
  int points = 9;

  std::vector<double> values() const;
};

/// Parses "lo:hi:points".
LambdaAxis parse_lambda_axis(const std::string& text);

/// Cartesian product of the axis over the penalized terms, in lexicographic
/// order (last penalized term varies fastest).
std::vector<Eigen::VectorXd> cartesian_grid(const ModelSpec& spec,
                                            const LambdaAxis& axis);

/// Index of the minimum finite value. Exact ties go to the lexicographically
/// larger lambda vector. Throws if no value is finite.
std::size_t argmin_with_ties(const std::vector<Eigen::VectorXd>& grid,
                             const std::vector<double>& values);

/// Scores every grid point; grid points run in parallel, the report is in
/// grid order. Points whose fit fails score +infinity.
CriterionReport select(const ModelSpec& spec, const LongitudinalDataset& data,
                       const std::vector<Eigen::VectorXd>& grid,
                       Criterion criterion, const FitConfig& config,
                       const SelectOptions& options = {});

/// Several criteria over one grid; GIC and GBIC share their fits.
std::vector<CriterionReport> select_many(const ModelSpec& spec,
                                         const LongitudinalDataset& data,
                                         const std::vector<Eigen::VectorXd>& grid,
                                         const std::vector<Criterion>& criteria,
                                         const FitConfig& config,
                                         const SelectOptions& options = {});

/// Default search: the full Cartesian grid when at most three terms are
/// penalized, otherwise cyclic coordinate descent over the same axis.
std::vector<CriterionReport> search_lambdas(const ModelSpec& spec,
                                            const LongitudinalDataset& data,
                                            const LambdaAxis& axis,
                                            const std::vector<Criterion>& criteria,
                                            const FitConfig& config,
                                            const SelectOptions& options = {});

}  // namespace vcm
