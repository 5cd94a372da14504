#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcm/basis.hpp"
#include "vcm/dataset.hpp"

namespace vcm {

inline constexpr int kIntercept = -1;

enum class PenaltyKind { identity, second_difference };

/// One coefficient function beta_k(t) = gamma_k' phi^(k)(t).
struct Term {
  /// Covariate column multiplying this term, or kIntercept (D_i0 = I).
  int covariate = kIntercept;
  BSplineBasis basis;
  /// Omega_k; M_k x M_k, symmetric positive semi-definite.
  Eigen::MatrixXd penalty;
  bool penalized = true;

  std::string name() const;
};

Eigen::MatrixXd make_penalty(PenaltyKind kind, int size);

/// Terms in the order they are swept: the intercept (if any) first, then x1..xp.
class ModelSpec {
 public:
  ModelSpec(std::vector<Term> terms, int num_covariates);

  const std::vector<Term>& terms() const noexcept { return terms_; }
  const Term& term(std::size_t k) const { return terms_.at(k); }
  std::size_t num_terms() const noexcept { return terms_.size(); }
  int num_covariates() const noexcept { return p_; }
  bool has_intercept() const noexcept;
  /// Sum of M_k.
  Eigen::Index total_basis() const noexcept { return offsets_.back(); }
  /// Position of gamma_k inside the stacked coefficient vector.
  Eigen::Index offset(std::size_t k) const { return offsets_.at(k); }
  /// Index of the term for covariate column c (or kIntercept), or -1.
  int term_for_covariate(int covariate) const noexcept;
  std::vector<std::size_t> penalized_terms() const;

 private:
  std::vector<Term> terms_;
  int p_;
  std::vector<Eigen::Index> offsets_;
};

struct ModelOptions {
  int order = 1;
  /// Number of basis functions per term; 0 selects max_i n_i.
  int num_basis = 0;
  bool intercept = true;
  bool penalize_intercept = false;
  PenaltyKind penalty = PenaltyKind::identity;
  /// Basis interval; when unset, the observed time range of the data.
  double t_min = 0.0;
  double t_max = 0.0;
  bool explicit_range = false;
};

/// Same basis size, order and penalty for every term.
ModelSpec make_model_spec(const LongitudinalDataset& data,
                          const ModelOptions& options);

struct FittedModel {
  std::vector<Eigen::VectorXd> gammas;
  double sigma2 = 1.0;
  /// One entry per term; ignored for unpenalized terms.
  Eigen::VectorXd lambdas;
  int iterations = 0;
  bool converged = false;
  double final_delta = 0.0;
  /// sigma^2 was held fixed during fitting (it is then not a parameter).
  bool sigma2_fixed = false;
  /// sigma^2 hit the configured floor.
  bool sigma2_clamped = false;

  Eigen::VectorXd stacked() const;
  void set_stacked(const ModelSpec& spec, const Eigen::VectorXd& gamma);
};

/// Zero coefficients with the given sigma^2 and lambdas.
FittedModel zero_model(const ModelSpec& spec, double sigma2,
                       const Eigen::VectorXd& lambdas);

/// Lambdas actually applied: lambdas[k] for penalized terms, 0 otherwise.
Eigen::VectorXd effective_lambdas(const ModelSpec& spec,
                                  const Eigen::VectorXd& lambdas);

/// B_ik = D_ik Phi_ik for every term k.
std::vector<Eigen::MatrixXd> design_blocks(const ModelSpec& spec,
                                           const SubjectRecord& subject);

/// [B_i0 | B_i1 | ... ]; n_i x total_basis.
Eigen::MatrixXd stacked_design(const ModelSpec& spec,
                               const SubjectRecord& subject);

Eigen::VectorXd predict(const FittedModel& model, const ModelSpec& spec,
                        const SubjectRecord& subject);

Eigen::VectorXd coefficient_curve(const FittedModel& model,
                                  const ModelSpec& spec, std::size_t k,
                                  const Eigen::VectorXd& grid);

/// Gaussian log-likelihood with Sigma_i = sigma2 S_i.
double log_likelihood(const FittedModel& model, const ModelSpec& spec,
                      const LongitudinalDataset& data);

/// Contribution l^(i) of a single subject.
double subject_log_likelihood(const FittedModel& model, const ModelSpec& spec,
                              const SubjectRecord& subject);

/// sum_k lambda_k gamma_k' Omega_k gamma_k over penalized terms.
double penalty_quadratic(const FittedModel& model, const ModelSpec& spec);

/// l(theta) - (n/2) sum_k lambda_k gamma_k' Omega_k gamma_k.
double penalized_log_likelihood(const FittedModel& model,
                                const ModelSpec& spec,
                                const LongitudinalDataset& data);

}  // namespace vcm
