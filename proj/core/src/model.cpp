#include "vcm/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "internal.hpp"
#include "vcm/error.hpp"

namespace vcm {

std::string Term::name() const {
  return covariate == kIntercept ? "intercept"
                                 : "x" + std::to_string(covariate + 1);
}

Eigen::MatrixXd make_penalty(PenaltyKind kind, int size) {
  switch (kind) {
    case PenaltyKind::identity:
      return Eigen::MatrixXd::Identity(size, size);
    case PenaltyKind::second_difference: {
      if (size < 3) {
        throw InvalidArgument("second-difference penalty needs at least 3 basis functions");
      }
      Eigen::MatrixXd d = Eigen::MatrixXd::Zero(size - 2, size);
      for (int r = 0; r < size - 2; ++r) {
        d(r, r) = 1.0;
        d(r, r + 1) = -2.0;
        d(r, r + 2) = 1.0;
      }
      return d.transpose() * d;
    }
  }
  throw InvalidArgument("unknown penalty kind");
}

ModelSpec::ModelSpec(std::vector<Term> terms, int num_covariates)
    : terms_(std::move(terms)), p_(num_covariates) {
  if (terms_.empty()) throw InvalidArgument("model has no terms");
  offsets_.reserve(terms_.size() + 1);
  offsets_.push_back(0);
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const Term& t = terms_[k];
    if (t.covariate != kIntercept && (t.covariate < 0 || t.covariate >= p_)) {
      throw DimensionMismatch("term " + std::to_string(k) +
                              " refers to a covariate outside 1.." +
                              std::to_string(p_));
    }
    const int m = t.basis.size();
    if (t.penalty.rows() != m || t.penalty.cols() != m) {
      throw DimensionMismatch("penalty for " + t.name() + " must be " +
                              std::to_string(m) + "x" + std::to_string(m));
    }
    const double scale = std::max(1.0, t.penalty.cwiseAbs().maxCoeff());
    if ((t.penalty - t.penalty.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw InvalidArgument("penalty for " + t.name() + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(t.penalty,
                                                       Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
      throw InvalidArgument("penalty for " + t.name() +
                            " is not positive semi-definite");
    }
    offsets_.push_back(offsets_.back() + m);
  }
}

bool ModelSpec::has_intercept() const noexcept {
  return term_for_covariate(kIntercept) >= 0;
}

int ModelSpec::term_for_covariate(int covariate) const noexcept {
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    if (terms_[k].covariate == covariate) return static_cast<int>(k);
  }
  return -1;
}

std::vector<std::size_t> ModelSpec::penalized_terms() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    if (terms_[k].penalized) out.push_back(k);
  }
  return out;
}

ModelSpec make_model_spec(const LongitudinalDataset& data,
                          const ModelOptions& options) {
  const int m = options.num_basis > 0
                    ? options.num_basis
                    : static_cast<int>(data.max_subject_size());
  double lo = options.explicit_range ? options.t_min : data.min_time();
  double hi = options.explicit_range ? options.t_max : data.max_time();
  if (!(lo < hi)) {
    throw InvalidArgument("observed time range is degenerate; cannot place knots");
  }
  const BSplineBasis basis = make_uniform_basis(lo, hi, m, options.order);
  const Eigen::MatrixXd omega = make_penalty(options.penalty, m);

  std::vector<Term> terms;
  if (options.intercept) {
    terms.push_back(Term{kIntercept, basis, omega, options.penalize_intercept});
  }
  for (int c = 0; c < data.num_covariates(); ++c) {
    terms.push_back(Term{c, basis, omega, true});
  }
  return ModelSpec(std::move(terms), data.num_covariates());
}

Eigen::VectorXd FittedModel::stacked() const {
  Eigen::Index total = 0;
  for (const auto& g : gammas) total += g.size();
  Eigen::VectorXd out(total);
  Eigen::Index pos = 0;
  for (const auto& g : gammas) {
    out.segment(pos, g.size()) = g;
    pos += g.size();
  }
  return out;
}

void FittedModel::set_stacked(const ModelSpec& spec, const Eigen::VectorXd& gamma) {
  if (gamma.size() != spec.total_basis()) {
    throw DimensionMismatch("stacked coefficient vector has the wrong length");
  }
  gammas.resize(spec.num_terms());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    gammas[k] = gamma.segment(spec.offset(k), spec.term(k).basis.size());
  }
}

FittedModel zero_model(const ModelSpec& spec, double sigma2,
                       const Eigen::VectorXd& lambdas) {
  FittedModel m;
  for (const auto& t : spec.terms()) {
    m.gammas.push_back(Eigen::VectorXd::Zero(t.basis.size()));
  }
  m.sigma2 = sigma2;
  m.lambdas = lambdas;
  return m;
}

Eigen::VectorXd effective_lambdas(const ModelSpec& spec,
                                  const Eigen::VectorXd& lambdas) {
  if (lambdas.size() != static_cast<Eigen::Index>(spec.num_terms())) {
    throw DimensionMismatch("expected " + std::to_string(spec.num_terms()) +
                            " lambdas, got " + std::to_string(lambdas.size()));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(lambdas.size());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const double l = lambdas[static_cast<Eigen::Index>(k)];
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw InvalidArgument("lambda for " + spec.term(k).name() +
                            " must be finite and >= 0");
    }
    if (spec.term(k).penalized) out[static_cast<Eigen::Index>(k)] = l;
  }
  return out;
}

namespace {

void check_subject(const ModelSpec& spec, const SubjectRecord& subject) {
  if (subject.covariates.cols() != spec.num_covariates()) {
    throw DimensionMismatch("subject '" + subject.id + "' has " +
                            std::to_string(subject.covariates.cols()) +
                            " covariates, model expects " +
                            std::to_string(spec.num_covariates()));
  }
}

void check_model(const FittedModel& model, const ModelSpec& spec) {
  if (model.gammas.size() != spec.num_terms()) {
    throw DimensionMismatch("fitted model has " +
                            std::to_string(model.gammas.size()) +
                            " coefficient blocks, spec has " +
                            std::to_string(spec.num_terms()));
  }
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    if (model.gammas[k].size() != spec.term(k).basis.size()) {
      throw DimensionMismatch("coefficient block " + spec.term(k).name() +
                              " has the wrong length");
    }
  }
}

}  // namespace

std::vector<Eigen::MatrixXd> design_blocks(const ModelSpec& spec,
                                           const SubjectRecord& subject) {
  check_subject(spec, subject);
  const std::span<const double> times(subject.times.data(),
                                      static_cast<std::size_t>(subject.size()));
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(spec.num_terms());
  for (const auto& t : spec.terms()) {
    Eigen::MatrixXd phi = basis_matrix(t.basis, times);
    if (t.covariate != kIntercept) {
      phi = subject.covariates.col(t.covariate).asDiagonal() * phi;
    }
    blocks.push_back(std::move(phi));
  }
  return blocks;
}

Eigen::MatrixXd stacked_design(const ModelSpec& spec,
                               const SubjectRecord& subject) {
  const auto blocks = design_blocks(spec, subject);
  Eigen::MatrixXd out(subject.size(), spec.total_basis());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    out.middleCols(spec.offset(k), blocks[k].cols()) = blocks[k];
  }
  return out;
}

Eigen::VectorXd predict(const FittedModel& model, const ModelSpec& spec,
                        const SubjectRecord& subject) {
  check_model(model, spec);
  return stacked_design(spec, subject) * model.stacked();
}

Eigen::VectorXd coefficient_curve(const FittedModel& model,
                                  const ModelSpec& spec, std::size_t k,
                                  const Eigen::VectorXd& grid) {
  if (k >= spec.num_terms()) {
    throw InvalidArgument("coefficient index " + std::to_string(k) +
                          " out of range (model has " +
                          std::to_string(spec.num_terms()) + " terms)");
  }
  check_model(model, spec);
  const std::span<const double> ts(grid.data(), static_cast<std::size_t>(grid.size()));
  return basis_matrix(spec.term(k).basis, ts) * model.gammas[k];
}

double subject_log_likelihood(const FittedModel& model, const ModelSpec& spec,
                              const SubjectRecord& subject) {
  if (!(model.sigma2 > 0.0)) throw InvalidArgument("sigma^2 must be positive");
  const internal::Whitener w(subject);
  const Eigen::VectorXd r = subject.responses - predict(model, spec, subject);
  const double quad = w.apply(r).squaredNorm();
  const auto ni = static_cast<double>(subject.size());
  return -0.5 * ni * internal::kLog2Pi -
         0.5 * (ni * std::log(model.sigma2) + w.log_det()) -
         0.5 * quad / model.sigma2;
}

double log_likelihood(const FittedModel& model, const ModelSpec& spec,
                      const LongitudinalDataset& data) {
  double total = 0.0;
  for (const auto& s : data.subjects()) {
    total += subject_log_likelihood(model, spec, s);
  }
  return total;
}

double penalty_quadratic(const FittedModel& model, const ModelSpec& spec) {
  check_model(model, spec);
  const Eigen::VectorXd lam = effective_lambdas(spec, model.lambdas);
  double total = 0.0;
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const double l = lam[static_cast<Eigen::Index>(k)];
    if (l == 0.0) continue;
    const auto& g = model.gammas[k];
    total += l * g.dot(spec.term(k).penalty * g);
  }
  return total;
}

double penalized_log_likelihood(const FittedModel& model,
                                const ModelSpec& spec,
                                const LongitudinalDataset& data) {
  const auto n = static_cast<double>(data.num_subjects());
  return log_likelihood(model, spec, data) - 0.5 * n * penalty_quadratic(model, spec);
}

}  // namespace vcm
