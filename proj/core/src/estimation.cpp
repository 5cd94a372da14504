#include "vcm/estimation.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>

#include "internal.hpp"
#include "vcm/error.hpp"

namespace vcm {

void FitConfig::validate() const {
  if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");
  if (max_sweeps < 1) throw InvalidArgument("max_sweeps must be >= 1");
  if (!(sigma2_floor > 0.0)) throw InvalidArgument("sigma2_floor must be positive");
  if (fixed_sigma2 && !(*fixed_sigma2 > 0.0)) {
    throw InvalidArgument("fixed sigma^2 must be positive");
  }
}

NormalEquations::NormalEquations(const ModelSpec& spec,
                                 const LongitudinalDataset& data)
    : spec_(spec) {
  if (data.num_covariates() != spec.num_covariates()) {
    throw DimensionMismatch("dataset has " + std::to_string(data.num_covariates()) +
                            " covariates, model expects " +
                            std::to_string(spec.num_covariates()));
  }
  const Eigen::Index total = data.total_observations();
  design_.resize(total, spec.total_basis());
  response_.resize(total);
  row_start_.reserve(data.num_subjects() + 1);
  Eigen::Index row = 0;
  for (const auto& s : data.subjects()) {
    row_start_.push_back(row);
    const internal::Whitener w(s);
    const Eigen::Index ni = s.size();
    design_.middleRows(row, ni) = w.apply(stacked_design(spec, s));
    response_.segment(row, ni) = w.apply(s.responses);
    log_det_s_ += w.log_det();
    row += ni;
  }
  row_start_.push_back(row);
  gram_ = design_.transpose() * design_;
  cross_ = design_.transpose() * response_;

  factors_.resize(spec.num_terms());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const Eigen::Index off = spec.offset(k);
    const Eigen::Index m = spec.term(k).basis.size();
    const Eigen::MatrixXd gkk = gram_.block(off, off, m, m);
    Eigen::LLT<Eigen::MatrixXd> llt(gkk);
    if (llt.info() != Eigen::Success) continue;
    const double top = gkk.diagonal().maxCoeff();
    const double pivot = llt.matrixLLT().diagonal().minCoeff();
    if (!(top > 0.0) || !(pivot * pivot > 1e-10 * top)) continue;
    const auto lower = llt.matrixL();
    Eigen::MatrixXd c = lower.solve(spec.term(k).penalty);
    c = lower.solve(c.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (c + c.transpose()));
    if (eig.info() != Eigen::Success) continue;
    BlockFactor& f = factors_[k];
    f.transform = llt.matrixU().solve(eig.eigenvectors());
    f.eig = eig.eigenvalues().cwiseMax(0.0);
    f.diagonalized = true;
  }
}

Eigen::VectorXd NormalEquations::step(std::size_t k, const Eigen::VectorXd& gamma,
                                      double sigma2, double lambda) const {
  const Eigen::Index off = spec_.offset(k);
  const Eigen::Index m = spec_.term(k).basis.size();
  const auto n = static_cast<double>(num_subjects());

  // Multiplied through by sigma2 to keep the data term at unit scale.
  const double weight = lambda > 0.0 ? n * lambda * sigma2 : 0.0;
  Eigen::VectorXd rhs = cross_.segment(off, m);
  rhs.noalias() -= gram_.middleRows(off, m) * gamma;
  rhs.noalias() += gram_.block(off, off, m, m) * gamma.segment(off, m);

  const BlockFactor& f = factors_[k];
  if (f.diagonalized) {
    Eigen::VectorXd proj = f.transform.transpose() * rhs;
    proj.array() /= 1.0 + weight * f.eig.array();
    return f.transform * proj;
  }

  Eigen::MatrixXd lhs = gram_.block(off, off, m, m);
  if (weight > 0.0) lhs += weight * spec_.term(k).penalty;

  Eigen::LLT<Eigen::MatrixXd> llt(lhs);
  const double scale = std::max(lhs.diagonal().maxCoeff(), 0.0);
  bool singular = llt.info() != Eigen::Success || !(scale > 0.0);
  if (!singular) {
    const double min_pivot = llt.matrixLLT().diagonal().minCoeff();
    singular = !(min_pivot * min_pivot > 1e-12 * scale);
  }
  if (singular) {
    throw RankDeficiency(k, "normal equations for term " + spec_.term(k).name() +
                                " (index " + std::to_string(k) +
                                ") are rank deficient; increase lambda or "
                                "reduce the number of basis functions");
  }
  return llt.solve(rhs);
}

Eigen::VectorXd NormalEquations::residual(const Eigen::VectorXd& gamma) const {
  return response_ - design_ * gamma;
}

namespace {

struct Sigma2Estimate {
  double value;
  bool clamped;
};

Sigma2Estimate estimate_sigma2(const NormalEquations& system,
                               const Eigen::VectorXd& gamma,
                               const FitConfig& config) {
  double raw = 0.0;
  switch (config.sigma2_rule) {
    case Sigma2Rule::ml: {
      // z'z - 2 gamma'c + gamma'G gamma; exact residual when cancellation bites.
      const double zz = system.response().squaredNorm();
      double rss = zz - 2.0 * gamma.dot(system.cross()) + gamma.dot(system.gram() * gamma);
      if (!(rss > 1e-8 * zz)) rss = system.residual(gamma).squaredNorm();
      raw = rss / static_cast<double>(system.num_observations());
      break;
    }
    case Sigma2Rule::printed: {
      const ModelSpec& spec = system.spec();
      const std::size_t last = spec.num_terms() - 1;
      Eigen::VectorXd partial = gamma;
      partial.segment(spec.offset(last), spec.term(last).basis.size()).setZero();
      raw = system.residual(partial).squaredNorm() /
            static_cast<double>(system.num_subjects());
      break;
    }
  }
  if (!(raw >= config.sigma2_floor)) return {config.sigma2_floor, true};
  return {raw, false};
}

#ifndef NDEBUG
double fixed_sigma_objective(const NormalEquations& system,
                             const Eigen::VectorXd& gamma, double sigma2,
                             const Eigen::VectorXd& lambdas) {
  const ModelSpec& spec = system.spec();
  double pen = 0.0;
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const auto g = gamma.segment(spec.offset(k), spec.term(k).basis.size());
    pen += lambdas[static_cast<Eigen::Index>(k)] * g.dot(spec.term(k).penalty * g);
  }
  return -0.5 * system.residual(gamma).squaredNorm() / sigma2 -
         0.5 * static_cast<double>(system.num_subjects()) * pen;
}
#endif

}  // namespace

Eigen::VectorXd backfit_step(std::size_t k, const FittedModel& current,
                             const ModelSpec& spec,
                             const LongitudinalDataset& data,
                             const Eigen::VectorXd& lambdas) {
  if (k >= spec.num_terms()) {
    throw InvalidArgument("term index " + std::to_string(k) + " out of range");
  }
  if (!(current.sigma2 > 0.0)) throw InvalidArgument("sigma^2 must be positive");
  const Eigen::VectorXd lam = effective_lambdas(spec, lambdas);
  const NormalEquations system(spec, data);
  return system.step(k, current.stacked(), current.sigma2,
                     lam[static_cast<Eigen::Index>(k)]);
}

double update_sigma2(const FittedModel& current, const ModelSpec& spec,
                     const LongitudinalDataset& data, const FitConfig& config) {
  const NormalEquations system(spec, data);
  return estimate_sigma2(system, current.stacked(), config).value;
}

FittedModel fit(const ModelSpec& spec, const LongitudinalDataset& data,
                const Eigen::VectorXd& lambdas, const FitConfig& config) {
  return fit(NormalEquations(spec, data), lambdas, config);
}

FittedModel fit(const NormalEquations& system, const Eigen::VectorXd& lambdas,
                const FitConfig& config) {
  config.validate();
  const ModelSpec& spec = system.spec();
  const Eigen::VectorXd lam = effective_lambdas(spec, lambdas);
  const std::size_t num_terms = spec.num_terms();

  FittedModel model;
  model.lambdas = lambdas;
  model.sigma2_fixed = config.fixed_sigma2.has_value();
  if (config.fixed_sigma2) {
    model.sigma2 = *config.fixed_sigma2;
  } else {
    const Eigen::VectorXd& y = system.response();
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / static_cast<double>(y.size());
    model.sigma2 = std::max(var, config.sigma2_floor);
  }

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(spec.total_basis());
  if (config.init == InitKind::ridge) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(spec.total_basis());
    for (std::size_t k = 0; k < num_terms; ++k) {
      gamma.segment(spec.offset(k), spec.term(k).basis.size()) =
          system.step(k, zero, model.sigma2, lam[static_cast<Eigen::Index>(k)]) /
          static_cast<double>(num_terms);
    }
  }

  double delta = 0.0;
  int sweep = 0;
  bool converged = false;
  while (sweep < config.max_sweeps) {
    ++sweep;
    delta = 0.0;
#ifndef NDEBUG
    double before = fixed_sigma_objective(system, gamma, model.sigma2, lam);
#endif
    for (std::size_t k = 0; k < num_terms; ++k) {
      const Eigen::Index off = spec.offset(k);
      const Eigen::Index m = spec.term(k).basis.size();
      Eigen::VectorXd updated =
          system.step(k, gamma, model.sigma2, lam[static_cast<Eigen::Index>(k)]);
      delta = std::max(delta, (updated - gamma.segment(off, m)).cwiseAbs().maxCoeff());
      gamma.segment(off, m) = updated;
    }
#ifndef NDEBUG
    const double after = fixed_sigma_objective(system, gamma, model.sigma2, lam);
    assert(after >= before - 1e-9 * (1.0 + std::abs(before)));
#endif
    if (!config.fixed_sigma2) {
      const auto est = estimate_sigma2(system, gamma, config);
      model.sigma2 = est.value;
      model.sigma2_clamped = est.clamped;
    }
    if (delta < config.tol) {
      converged = true;
      break;
    }
  }

  model.set_stacked(spec, gamma);
  model.iterations = sweep;
  model.converged = converged;
  model.final_delta = delta;
  return model;
}

}  // namespace vcm
