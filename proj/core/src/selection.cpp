#include "vcm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "internal.hpp"
#include "vcm/error.hpp"
#include "vcm/parallel.hpp"
#include "vcm/rng.hpp"

namespace vcm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Block-diagonal lambda_k Omega_k over the stacked coefficients.
Eigen::MatrixXd penalty_matrix(const ModelSpec& spec, const Eigen::VectorXd& lambdas) {
  const Eigen::VectorXd lam = effective_lambdas(spec, lambdas);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(spec.total_basis(), spec.total_basis());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const double l = lam[static_cast<Eigen::Index>(k)];
    if (l == 0.0) continue;
    const Eigen::Index off = spec.offset(k);
    const Eigen::Index m = spec.term(k).basis.size();
    p.block(off, off, m, m) = l * spec.term(k).penalty;
  }
  return p;
}

void require_positive_sigma2(const FittedModel& model) {
  if (!(model.sigma2 > 0.0)) {
    throw InvalidArgument("sigma^2 must be positive to evaluate a criterion");
  }
}

Eigen::MatrixXd curvature_R(const NormalEquations& system, const FittedModel& model) {
  require_positive_sigma2(model);
  const ModelSpec& spec = system.spec();
  const Eigen::Index dg = spec.total_basis();
  const bool with_sigma = !model.sigma2_fixed;
  const Eigen::Index d = dg + (with_sigma ? 1 : 0);
  const auto n = static_cast<double>(system.num_subjects());
  const auto big_n = static_cast<double>(system.num_observations());
  const double s2 = model.sigma2;
  const double s4 = s2 * s2;

  const Eigen::VectorXd gamma = model.stacked();
  const Eigen::VectorXd e = system.residual(gamma);

  // Sum over subjects of the per-subject Hessians of l_lambda^(i).
  Eigen::MatrixXd hess(d, d);
  hess.topLeftCorner(dg, dg) =
      -system.gram() / s2 - n * penalty_matrix(spec, model.lambdas);
  if (with_sigma) {
    const Eigen::VectorXd cross = -(system.design().transpose() * e) / s4;
    hess.topRightCorner(dg, 1) = cross;
    hess.bottomLeftCorner(1, dg) = cross.transpose();
    hess(dg, dg) = big_n / (2.0 * s4) - e.squaredNorm() / (s4 * s2);
  }
  return -hess / n;
}

Eigen::MatrixXd curvature_Q_raw(const NormalEquations& system, const FittedModel& model) {
  require_positive_sigma2(model);
  const ModelSpec& spec = system.spec();
  const Eigen::Index dg = spec.total_basis();
  const bool with_sigma = !model.sigma2_fixed;
  const Eigen::Index d = dg + (with_sigma ? 1 : 0);
  const auto n = static_cast<double>(system.num_subjects());
  const double s2 = model.sigma2;

  const Eigen::VectorXd gamma = model.stacked();
  const Eigen::VectorXd e = system.residual(gamma);
  const Eigen::VectorXd shrink = penalty_matrix(spec, model.lambdas) * gamma;

  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd score(d), penalized(d);
  for (std::size_t i = 0; i < system.num_subjects(); ++i) {
    const Eigen::Index r0 = system.row_start(i);
    const Eigen::Index ni = system.rows_of(i);
    const auto wi = system.design().middleRows(r0, ni);
    const auto ei = e.segment(r0, ni);
    score.head(dg) = wi.transpose() * ei / s2;
    if (with_sigma) {
      score[dg] = -static_cast<double>(ni) / (2.0 * s2) + ei.squaredNorm() / (2.0 * s2 * s2);
    }
    penalized = score;
    penalized.head(dg) -= shrink;
    q.noalias() += penalized * score.transpose();
  }
  return q / n;
}

double system_log_likelihood(const NormalEquations& system, const FittedModel& model) {
  require_positive_sigma2(model);
  const auto big_n = static_cast<double>(system.num_observations());
  const double quad = system.residual(model.stacked()).squaredNorm();
  return -0.5 * big_n * internal::kLog2Pi -
         0.5 * (big_n * std::log(model.sigma2) + system.log_det_correlation()) -
         0.5 * quad / model.sigma2;
}

double system_gic(const NormalEquations& system, const FittedModel& model) {
  const Eigen::MatrixXd R = curvature_R(system, model);
  Eigen::MatrixXd Q = curvature_Q_raw(system, model);
  Q = 0.5 * (Q + Q.transpose()).eval();
  return -2.0 * system_log_likelihood(system, model) + 2.0 * gic_trace(R, Q);
}

double system_gbic(const NormalEquations& system, const FittedModel& model,
                   GbicVariant variant) {
  const ModelSpec& spec = system.spec();
  const auto n = static_cast<double>(system.num_subjects());
  const Eigen::VectorXd lam = effective_lambdas(spec, model.lambdas);

  double unpenalized_dims = model.sigma2_fixed ? 0.0 : 1.0;
  double log_det_omega = 0.0;
  double log_lambda = 0.0;
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const Term& t = spec.term(k);
    if (!t.penalized) {
      unpenalized_dims += t.basis.size();
      continue;
    }
    const PenaltySpectrum ps = penalty_spectrum(t.penalty);
    unpenalized_dims += t.basis.size() - ps.rank;
    log_det_omega += ps.log_det;
    if (variant == GbicVariant::rederived && ps.rank > 0) {
      const double l = lam[static_cast<Eigen::Index>(k)];
      if (!(l > 0.0)) return kInf;
      log_lambda += ps.rank * std::log(l);
    }
  }

  // n sum lambda g'Omega g over the same terms as penalty_quadratic.
  double penalty = 0.0;
  const Eigen::VectorXd gamma = model.stacked();
  penalty = gamma.dot(penalty_matrix(spec, model.lambdas) * gamma);

  double value = -2.0 * system_log_likelihood(system, model) + n * penalty -
                 unpenalized_dims * internal::kLog2Pi + unpenalized_dims * std::log(n) -
                 log_det_omega + log_abs_det(curvature_R(system, model));
  if (variant == GbicVariant::rederived) value -= log_lambda;
  return value;
}

/// Training systems and held-out designs for every fold, built once per
/// dataset and reused across the lambda grid.
struct CvPlan {
  struct Fold {
    NormalEquations train;
    std::vector<Eigen::MatrixXd> held_design;
    std::vector<Eigen::VectorXd> held_response;
  };
  std::vector<Fold> folds;
  double held_observations = 0.0;

  CvPlan(const ModelSpec& spec, const LongitudinalDataset& data, int num_folds,
         std::uint64_t seed) {
    const auto assignment = make_folds(data.num_subjects(), num_folds, seed);
    for (const auto& held : assignment) {
      std::vector<bool> is_held(data.num_subjects(), false);
      for (std::size_t i : held) is_held[i] = true;
      std::vector<std::size_t> train;
      for (std::size_t i = 0; i < data.num_subjects(); ++i) {
        if (!is_held[i]) train.push_back(i);
      }
      Fold fold{NormalEquations(spec, data.subset(train)), {}, {}};
      for (std::size_t i : held) {
        const SubjectRecord& s = data.subjects()[i];
        fold.held_design.push_back(stacked_design(spec, s));
        fold.held_response.push_back(s.responses);
        held_observations += static_cast<double>(s.size());
      }
      folds.push_back(std::move(fold));
    }
  }

  struct Score {
    double value;
    bool converged;
  };

  Score evaluate(const Eigen::VectorXd& lambdas, const FitConfig& config) const {
    double sse = 0.0;
    bool converged = true;
    for (const auto& fold : folds) {
      FittedModel m;
      try {
        m = fit(fold.train, lambdas, config);
      } catch (const Error&) {
        return {kInf, false};
      }
      converged = converged && m.converged;
      const Eigen::VectorXd gamma = m.stacked();
      for (std::size_t h = 0; h < fold.held_design.size(); ++h) {
        sse += (fold.held_response[h] - fold.held_design[h] * gamma).squaredNorm();
      }
    }
    return {sse / held_observations, converged};
  }
};

std::vector<double> axis_values_checked(const LambdaAxis& axis) {
  if (axis.points < 1) throw InvalidArgument("lambda axis needs at least one point");
  if (!(axis.lo > 0.0) || !(axis.hi >= axis.lo)) {
    throw InvalidArgument("lambda axis needs 0 < lo <= hi");
  }
  return axis.values();
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

}  // namespace

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::gic:
      return "gic";
    case Criterion::gbic:
      return "gbic";
    case Criterion::cv:
      return "cv";
  }
  return "unknown";
}

Criterion parse_criterion(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "gic") return Criterion::gic;
  if (lower == "gbic") return Criterion::gbic;
  if (lower == "cv") return Criterion::cv;
  throw InvalidArgument("unknown criterion '" + name + "' (expected gic, gbic or cv)");
}

Eigen::MatrixXd compute_R(const FittedModel& model, const ModelSpec& spec,
                          const LongitudinalDataset& data) {
  return curvature_R(NormalEquations(spec, data), model);
}

Eigen::MatrixXd compute_Q_raw(const FittedModel& model, const ModelSpec& spec,
                              const LongitudinalDataset& data) {
  return curvature_Q_raw(NormalEquations(spec, data), model);
}

Eigen::MatrixXd compute_Q(const FittedModel& model, const ModelSpec& spec,
                          const LongitudinalDataset& data) {
  const Eigen::MatrixXd q = compute_Q_raw(model, spec, data);
  return 0.5 * (q + q.transpose());
}

Eigen::Index parameter_dimension(const FittedModel& model, const ModelSpec& spec) {
  return spec.total_basis() + (model.sigma2_fixed ? 0 : 1);
}

double gic_trace(const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(R);
  if (!(lu.rcond() > 1e-14)) {
    throw SingularMatrix("R is numerically singular (rcond " +
                         std::to_string(lu.rcond()) + ")");
  }
  return lu.solve(Q).trace();
}

double gic(const FittedModel& model, const ModelSpec& spec,
           const LongitudinalDataset& data) {
  return system_gic(NormalEquations(spec, data), model);
}

PenaltySpectrum penalty_spectrum(const Eigen::MatrixXd& omega) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double top = ev.maxCoeff();
  if (ev.minCoeff() < -1e-10 * std::max(1.0, std::abs(top))) {
    throw InvalidArgument("penalty matrix is not positive semi-definite");
  }
  PenaltySpectrum out;
  if (!(top > 0.0)) return out;
  for (double v : ev) {
    if (v > 1e-10 * top) {
      ++out.rank;
      out.log_det += std::log(v);
    }
  }
  return out;
}

double log_abs_det(const Eigen::MatrixXd& R) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(R);
  if (!(lu.rcond() > 1e-14)) {
    throw SingularMatrix("R is numerically singular (rcond " +
                         std::to_string(lu.rcond()) + ")");
  }
  return lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
}

double gbic(const FittedModel& model, const ModelSpec& spec,
            const LongitudinalDataset& data, GbicVariant variant) {
  return system_gbic(NormalEquations(spec, data), model, variant);
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t num_subjects,
                                                 int folds, std::uint64_t seed) {
  if (folds < 2) throw InvalidArgument("cross-validation needs at least 2 folds");
  if (static_cast<std::size_t>(folds) > num_subjects) {
    throw InvalidArgument("more folds (" + std::to_string(folds) + ") than subjects (" +
                          std::to_string(num_subjects) + ")");
  }
  Rng rng(derive_seed(seed, 0xC5));
  const auto order = shuffled_indices(num_subjects, rng);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    out[pos % out.size()].push_back(order[pos]);
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

double cv_score(const ModelSpec& spec, const LongitudinalDataset& data,
                const Eigen::VectorXd& lambdas, int folds,
                const FitConfig& config, std::uint64_t seed) {
  const CvPlan plan(spec, data, folds, seed);
  return plan.evaluate(lambdas, config).value;
}

std::vector<double> LambdaAxis::values() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(points, 0)));
  if (points == 1) {
    out.push_back(lo);
    return out;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < points; ++i) {
    out.push_back(std::pow(10.0, a + (b - a) * i / (points - 1)));
  }
  return out;
}

LambdaAxis parse_lambda_axis(const std::string& text) {
  std::stringstream ss(text);
  std::string lo, hi, pts;
  if (!std::getline(ss, lo, ':') || !std::getline(ss, hi, ':') ||
      !std::getline(ss, pts) || pts.empty()) {
    throw InvalidArgument("lambda grid must look like lo:hi:points, got '" + text + "'");
  }
  LambdaAxis axis;
  try {
    std::size_t used = 0;
    axis.lo = std::stod(lo, &used);
    if (used != lo.size()) throw std::invalid_argument(lo);
    axis.hi = std::stod(hi, &used);
    if (used != hi.size()) throw std::invalid_argument(hi);
    axis.points = std::stoi(pts, &used);
    if (used != pts.size()) throw std::invalid_argument(pts);
  } catch (const std::logic_error&) {
    throw InvalidArgument("cannot parse lambda grid '" + text + "'");
  }
  axis_values_checked(axis);
  return axis;
}

std::vector<Eigen::VectorXd> cartesian_grid(const ModelSpec& spec,
                                            const LambdaAxis& axis) {
  const std::vector<double> values = axis_values_checked(axis);
  const auto penalized = spec.penalized_terms();
  const auto num_terms = static_cast<Eigen::Index>(spec.num_terms());
  std::vector<Eigen::VectorXd> grid;
  std::vector<std::size_t> idx(penalized.size(), 0);
  while (true) {
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(num_terms);
    for (std::size_t j = 0; j < penalized.size(); ++j) {
      lam[static_cast<Eigen::Index>(penalized[j])] = values[idx[j]];
    }
    grid.push_back(std::move(lam));
    std::size_t j = penalized.size();
    while (j > 0) {
      --j;
      if (++idx[j] < values.size()) break;
      idx[j] = 0;
      if (j == 0) return grid;
    }
    if (penalized.empty()) return grid;
  }
}

std::size_t argmin_with_ties(const std::vector<Eigen::VectorXd>& grid,
                             const std::vector<double>& values) {
  if (grid.size() != values.size()) {
    throw DimensionMismatch("grid and values differ in length");
  }
  std::size_t best = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    if (best == values.size() || values[i] < values[best] ||
        (values[i] == values[best] && !lex_less(grid[i], grid[best]))) {
      best = i;
    }
  }
  if (best == values.size()) {
    throw Error("every lambda grid point failed to produce a finite criterion value");
  }
  return best;
}

std::vector<CriterionReport> select_many(const ModelSpec& spec,
                                         const LongitudinalDataset& data,
                                         const std::vector<Eigen::VectorXd>& grid,
                                         const std::vector<Criterion>& criteria,
                                         const FitConfig& config,
                                         const SelectOptions& options) {
  if (grid.empty()) throw InvalidArgument("lambda grid is empty");
  for (const auto& lam : grid) effective_lambdas(spec, lam);
  config.validate();

  const bool need_full = std::any_of(criteria.begin(), criteria.end(), [](Criterion c) {
    return c != Criterion::cv;
  });
  const bool need_cv = std::find(criteria.begin(), criteria.end(), Criterion::cv) !=
                       criteria.end();

  std::optional<NormalEquations> system;
  if (need_full) system.emplace(spec, data);
  std::optional<CvPlan> plan;
  if (need_cv) plan.emplace(spec, data, options.folds, options.seed);

  std::vector<CriterionReport> reports(criteria.size());
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    reports[c].criterion = criteria[c];
    reports[c].grid = grid;
    reports[c].values.assign(grid.size(), kInf);
    reports[c].converged.assign(grid.size(), false);
  }
  // vector<bool> is not safe for concurrent writes to distinct elements.
  std::vector<std::vector<char>> converged(criteria.size(),
                                           std::vector<char>(grid.size(), 0));

  parallel_for(grid.size(), options.threads, [&](std::size_t g) {
    std::optional<FittedModel> full;
    bool full_failed = false;
    for (std::size_t c = 0; c < criteria.size(); ++c) {
      if (criteria[c] == Criterion::cv) {
        const auto score = plan->evaluate(grid[g], config);
        reports[c].values[g] = score.value;
        converged[c][g] = score.converged;
        continue;
      }
      if (!full && !full_failed) {
        try {
          full = fit(*system, grid[g], config);
        } catch (const Error&) {
          full_failed = true;
        }
      }
      if (full_failed) continue;
      converged[c][g] = full->converged;
      try {
        reports[c].values[g] = criteria[c] == Criterion::gic
                                   ? system_gic(*system, *full)
                                   : system_gbic(*system, *full, options.gbic_variant);
      } catch (const Error&) {
        reports[c].values[g] = kInf;
      }
      if (!std::isfinite(reports[c].values[g])) reports[c].values[g] = kInf;
    }
  });

  for (std::size_t c = 0; c < criteria.size(); ++c) {
    for (std::size_t g = 0; g < grid.size(); ++g) {
      reports[c].converged[g] = converged[c][g] != 0;
    }
    const auto& v = reports[c].values;
    const bool any = std::any_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    reports[c].best_index = any ? argmin_with_ties(grid, v) : grid.size();
  }
  return reports;
}

CriterionReport select(const ModelSpec& spec, const LongitudinalDataset& data,
                       const std::vector<Eigen::VectorXd>& grid,
                       Criterion criterion, const FitConfig& config,
                       const SelectOptions& options) {
  auto reports = select_many(spec, data, grid, {criterion}, config, options);
  if (reports[0].best_index >= grid.size()) {
    throw Error("criterion " + to_string(criterion) +
                ": every lambda grid point failed");
  }
  return std::move(reports[0]);
}

std::vector<CriterionReport> search_lambdas(const ModelSpec& spec,
                                            const LongitudinalDataset& data,
                                            const LambdaAxis& axis,
                                            const std::vector<Criterion>& criteria,
                                            const FitConfig& config,
                                            const SelectOptions& options) {
  const auto penalized = spec.penalized_terms();
  if (penalized.size() <= 3) {
    return select_many(spec, data, cartesian_grid(spec, axis), criteria, config, options);
  }

  const std::vector<double> values = axis_values_checked(axis);
  const auto num_terms = static_cast<Eigen::Index>(spec.num_terms());
  auto to_lambdas = [&](const std::vector<std::size_t>& idx) {
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(num_terms);
    for (std::size_t j = 0; j < penalized.size(); ++j) {
      lam[static_cast<Eigen::Index>(penalized[j])] = values[idx[j]];
    }
    return lam;
  };

  std::vector<CriterionReport> out;
  for (Criterion criterion : criteria) {
    CriterionReport report;
    report.criterion = criterion;
    std::map<std::vector<std::size_t>, std::size_t> seen;
    std::vector<std::size_t> current(penalized.size(), values.size() / 2);
    constexpr int kMaxCycles = 20;
    for (int cycle = 0; cycle < kMaxCycles; ++cycle) {
      bool moved = false;
      for (std::size_t j = 0; j < penalized.size(); ++j) {
        std::vector<std::vector<std::size_t>> line;
        std::vector<Eigen::VectorXd> fresh;
        std::vector<std::vector<std::size_t>> fresh_idx;
        for (std::size_t v = 0; v < values.size(); ++v) {
          auto idx = current;
          idx[j] = v;
          if (!seen.count(idx)) {
            fresh.push_back(to_lambdas(idx));
            fresh_idx.push_back(idx);
          }
          line.push_back(std::move(idx));
        }
        if (!fresh.empty()) {
          const auto r = select_many(spec, data, fresh, {criterion}, config, options);
          for (std::size_t f = 0; f < fresh.size(); ++f) {
            seen[fresh_idx[f]] = report.grid.size();
            report.grid.push_back(fresh[f]);
            report.values.push_back(r[0].values[f]);
            report.converged.push_back(r[0].converged[f]);
          }
        }
        std::vector<Eigen::VectorXd> line_grid;
        std::vector<double> line_values;
        for (const auto& idx : line) {
          line_grid.push_back(report.grid[seen[idx]]);
          line_values.push_back(report.values[seen[idx]]);
        }
        const bool any = std::any_of(line_values.begin(), line_values.end(),
                                     [](double x) { return std::isfinite(x); });
        if (!any) continue;
        const std::size_t best = argmin_with_ties(line_grid, line_values);
        if (line[best] != current) {
          current = line[best];
          moved = true;
        }
      }
      if (!moved) break;
    }
    const bool any = std::any_of(report.values.begin(), report.values.end(),
                                 [](double x) { return std::isfinite(x); });
    report.best_index = any ? argmin_with_ties(report.grid, report.values)
                            : report.grid.size();
    out.push_back(std::move(report));
  }
  return out;
}

}  // namespace vcm
