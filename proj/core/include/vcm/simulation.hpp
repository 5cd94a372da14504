#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "vcm/dataset.hpp"
#include "vcm/estimation.hpp"
#include "vcm/selection.hpp"

namespace vcm {

/// How the binary covariate x2 is drawn.
enum class BinaryCovariate { per_subject, per_observation };

enum class AmseNormalizer {
  /// sum (f - yhat)^2 / (n * sum_i n_i), the published normalizer.
  printed,
  /// sum (f - yhat)^2 / sum_i n_i.
  per_observation,
};

/// Synthetic design: t ~ U(0,1), x1 = a_i cos(pi t) + b_i with a_i ~ N(0, 4)
/// and b_i ~ U(2, 3), x2 in {0, 1}, beta1(t) = sin(pi t), beta2(t) = t,
/// y = x1 beta1 + x2 beta2 + eps, eps ~ N(0, sigma^2).
struct SimDesign {
  int n = 25;
  int ni_min = 8;
  int ni_max = 15;
  std::uint64_t seed = 7;
  int replications = 1000;
  BinaryCovariate binary = BinaryCovariate::per_subject;
  /// sigma = noise_fraction * (max f - min f).
  double noise_fraction = 0.05;

  void validate() const;
};

double true_beta1(double t);
double true_beta2(double t);

struct SimulatedData {
  LongitudinalDataset data;
  /// f(t_ij) per subject, aligned with data.subjects().
  std::vector<Eigen::VectorXd> truth;
  double sigma = 0.0;
  /// Subject-level draws a_i and b_i, kept for diagnostics.
  std::vector<double> a;
  std::vector<double> b;
};

/// Replication `replication` of the design; depends only on (seed, replication).
SimulatedData generate(const SimDesign& design, int replication);

/// Noise scale for a replication: the range of the subject-averaged mean
/// function abar cos(pi t) sin(pi t) + bbar sin(pi t) + t (x2 = 1) over a
/// 10^4-point grid of [0, 1].
double noise_sigma(double noise_fraction, double mean_a, double mean_b);

/// Averaged squared error between truths and predictions per subject.
double amse(const std::vector<Eigen::VectorXd>& predictions,
            const std::vector<Eigen::VectorXd>& truths,
            AmseNormalizer normalizer = AmseNormalizer::printed);

/// Model used for the synthetic study: order-1 B-splines on [0, 1],
/// M_k = max_i n_i, Omega_k = I.
ModelSpec simulation_model(const LongitudinalDataset& data, bool intercept);

struct ComparisonOptions {
  std::vector<Criterion> criteria{Criterion::gic, Criterion::gbic, Criterion::cv};
  LambdaAxis axis;
  int folds = 5;
  FitConfig fit;
  bool intercept = true;
  GbicVariant gbic_variant = GbicVariant::printed;
  AmseNormalizer normalizer = AmseNormalizer::printed;
  int threads = 1;
};

struct ReplicationResult {
  int replication = 0;
  bool ok = false;
  /// One entry per criterion (in ComparisonOptions order).
  std::vector<double> amse;
  /// Selected lambdas for the covariate terms x1..xp, per criterion.
  std::vector<Eigen::VectorXd> lambdas;
};

struct CriterionSummary {
  Criterion criterion = Criterion::gic;
  double mean_amse = 0.0;
  /// Mean selected lambda per covariate term.
  Eigen::VectorXd mean_lambdas;
};

struct ComparisonTable {
  SimDesign design;
  int failures = 0;
  std::vector<CriterionSummary> summaries;
  std::vector<ReplicationResult> replications;
};

/// Runs every replication, selects lambda by each criterion on the default
/// grid and records AMSE at the selected lambda. A replication in which any
/// criterion fails is excluded from every summary and counted in `failures`.
ComparisonTable run_comparison(const SimDesign& design,
                               const ComparisonOptions& options);

/// Rows: AMSE, lambda_1, lambda_2, ...; one column per criterion.
void write_comparison_csv(std::ostream& out, const ComparisonTable& table);

}  // namespace vcm
