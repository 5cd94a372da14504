#pragma once

// Reference computations used by the tests. They are written with plain
// loops over observations and share no code path with the library beyond
// basis evaluation (and compute_R inside the GBIC reassembly).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcm/basis.hpp"
#include "vcm/dataset.hpp"
#include "vcm/model.hpp"
#include "vcm/selection.hpp"

namespace vcm::testing {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Recursive Cox-de Boor definition on the clamped knot vector, with the
/// right endpoint assigned to the last nonempty interval.
inline double cox_de_boor(const std::vector<double>& knots, int i, int degree,
                          double t) {
  if (degree == 0) {
    const double lo = knots[i];
    const double hi = knots[i + 1];
    if (lo == hi) return 0.0;
    if (t >= lo && t < hi) return 1.0;
    // Closed last interval.
    if (t == hi && hi == knots.back()) return 1.0;
    return 0.0;
  }
  double out = 0.0;
  const double d1 = knots[i + degree] - knots[i];
  if (d1 > 0) out += (t - knots[i]) / d1 * cox_de_boor(knots, i, degree - 1, t);
  const double d2 = knots[i + degree + 1] - knots[i + 1];
  if (d2 > 0) {
    out += (knots[i + degree + 1] - t) / d2 * cox_de_boor(knots, i + 1, degree - 1, t);
  }
  return out;
}

/// Random dataset with p covariates; times in [0, 1].
inline LongitudinalDataset random_dataset(std::mt19937_64& rng, int n, int ni_min,
                                          int ni_max, int p,
                                          bool correlated = false) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> size(ni_min, ni_max);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < n; ++i) {
    const int ni = size(rng);
    SubjectRecord s;
    s.id = std::to_string(i + 1);
    s.times.resize(ni);
    for (int j = 0; j < ni; ++j) s.times[j] = unit(rng);
    std::sort(s.times.begin(), s.times.end());
    s.responses.resize(ni);
    s.covariates.resize(ni, p);
    for (int j = 0; j < ni; ++j) {
      s.responses[j] = normal(rng);
      for (int k = 0; k < p; ++k) s.covariates(j, k) = 1.0 + 0.5 * normal(rng);
    }
    if (correlated) {
      // AR(1)-type correlation with a subject-specific coefficient.
      const double rho = 0.2 + 0.5 * unit(rng);
      s.correlation.resize(ni, ni);
      for (int a = 0; a < ni; ++a) {
        for (int b = 0; b < ni; ++b) s.correlation(a, b) = std::pow(rho, std::abs(a - b));
      }
    }
    subjects.push_back(std::move(s));
  }
  return LongitudinalDataset(std::move(subjects), p);
}

/// Residual of subject i under stacked coefficients, by loops.
inline Eigen::VectorXd loop_residual(const ModelSpec& spec, const SubjectRecord& s,
                                     const Eigen::VectorXd& gamma) {
  Eigen::VectorXd r = s.responses;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    for (std::size_t k = 0; k < spec.num_terms(); ++k) {
      const Term& t = spec.term(k);
      const double x = t.covariate == kIntercept ? 1.0 : s.covariates(j, t.covariate);
      const Eigen::VectorXd phi = evaluate_basis(t.basis, s.times[j]);
      for (Eigen::Index m = 0; m < phi.size(); ++m) {
        r[j] -= x * phi[m] * gamma[spec.offset(k) + m];
      }
    }
  }
  return r;
}

/// Log multivariate normal density of r ~ N(0, sigma2 S) via an explicit
/// determinant and inverse.
inline double mvn_log_density(const Eigen::VectorXd& r, const Eigen::MatrixXd& S,
                              double sigma2) {
  const Eigen::Index ni = r.size();
  const Eigen::MatrixXd cov =
      sigma2 * (S.size() == 0 ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(ni, ni)) : S);
  return -0.5 * static_cast<double>(ni) * kLog2Pi - 0.5 * std::log(cov.determinant()) -
         0.5 * r.dot(cov.inverse() * r);
}

/// l^(i)(theta) with theta = (gamma stacked, sigma2).
inline double loop_subject_loglik(const ModelSpec& spec, const SubjectRecord& s,
                                  const Eigen::VectorXd& gamma, double sigma2) {
  return mvn_log_density(loop_residual(spec, s, gamma), s.correlation, sigma2);
}

/// (1/2) sum_k lambda_k gamma_k' Omega_k gamma_k over penalized terms.
inline double half_penalty(const ModelSpec& spec, const Eigen::VectorXd& lambdas,
                           const Eigen::VectorXd& gamma) {
  double out = 0.0;
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    if (!spec.term(k).penalized) continue;
    const Eigen::VectorXd g = gamma.segment(spec.offset(k), spec.term(k).basis.size());
    out += 0.5 * lambdas[static_cast<Eigen::Index>(k)] * g.dot(spec.term(k).penalty * g);
  }
  return out;
}

/// Central-difference gradient of f at x.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index a = 0; a < x.size(); ++a) {
    Eigen::VectorXd xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    g[a] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Central-difference Hessian of f at x.
inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& x, double h) {
  const Eigen::Index d = x.size();
  Eigen::MatrixXd H(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a; b < d; ++b) {
      auto at = [&](double da, double db) {
        Eigen::VectorXd y = x;
        y[a] += da;
        y[b] += db;
        return f(y);
      };
      const double v = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
      H(a, b) = v;
      H(b, a) = v;
    }
  }
  return H;
}

/// Stacked penalized GLS solution with sigma^2 fixed, assembled densely:
/// (sum_i B_i' S_i^-1 B_i / s2 + n P) gamma = sum_i B_i' S_i^-1 y_i / s2.
inline Eigen::VectorXd joint_solution(const ModelSpec& spec, const LongitudinalDataset& data,
                                      const Eigen::VectorXd& lambdas, double sigma2) {
  const Eigen::Index d = spec.total_basis();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (const auto& s : data.subjects()) {
    const Eigen::Index ni = s.size();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(ni, d);
    for (Eigen::Index j = 0; j < ni; ++j) {
      for (std::size_t k = 0; k < spec.num_terms(); ++k) {
        const Term& t = spec.term(k);
        const double x = t.covariate == kIntercept ? 1.0 : s.covariates(j, t.covariate);
        const Eigen::VectorXd phi = evaluate_basis(t.basis, s.times[j]);
        for (Eigen::Index m = 0; m < phi.size(); ++m) B(j, spec.offset(k) + m) = x * phi[m];
      }
    }
    const Eigen::MatrixXd Sinv = s.correlation.size() == 0
                                     ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(ni, ni))
                                     : Eigen::MatrixXd(s.correlation.inverse());
    A += B.transpose() * Sinv * B / sigma2;
    b += B.transpose() * Sinv * s.responses / sigma2;
  }
  const auto n = static_cast<double>(data.num_subjects());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    if (!spec.term(k).penalized) continue;
    const Eigen::Index m = spec.term(k).basis.size();
    A.block(spec.offset(k), spec.offset(k), m, m) +=
        n * lambdas[static_cast<Eigen::Index>(k)] * spec.term(k).penalty;
  }
  return A.colPivHouseholderQr().solve(b);
}

inline double max_relative_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

/// -2 log[f(Y|theta) pi(theta|lambda)] + d log(n / 2 pi) + log|R| with the
/// Gaussian prior gamma_k ~ N(0, (n lambda_k Omega_k)^-) on penalized terms
/// and a flat prior elsewhere.
inline double reassembled_gbic(const FittedModel& m, const ModelSpec& spec,
                        const LongitudinalDataset& data) {
  const double n = static_cast<double>(data.num_subjects());
  double log_f = 0.0;
  for (const auto& s : data.subjects()) {
    log_f += loop_subject_loglik(spec, s, m.stacked(), m.sigma2);
  }
  double log_prior = 0.0;
  const Eigen::VectorXd lam = effective_lambdas(spec, m.lambdas);
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const auto& t = spec.term(k);
    if (!t.penalized) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(t.penalty);
    int rank = 0;
    double log_pdet = 0.0;
    for (double e : eig.eigenvalues()) {
      if (e > 1e-9 * eig.eigenvalues().cwiseAbs().maxCoeff()) {
        ++rank;
        log_pdet += std::log(e);
      }
    }
    const double l = lam[static_cast<Eigen::Index>(k)];
    log_prior += 0.5 * rank * std::log(n * l / (2.0 * std::numbers::pi)) + 0.5 * log_pdet -
                 0.5 * n * l * m.gammas[k].dot(t.penalty * m.gammas[k]);
  }
  const Eigen::MatrixXd R = compute_R(m, spec, data);
  const double d = static_cast<double>(R.rows());
  return -2.0 * (log_f + log_prior) + d * std::log(n / (2.0 * std::numbers::pi)) +
         std::log(std::abs(R.determinant()));
}

/// -2 log of the marginal likelihood of a fixed-sigma^2 model with a single
/// penalized two-function term (p = 0, M_0 = 2, Omega = I), by trapezoidal
/// quadrature over gamma_0 on a +-12 standard deviation window.
inline double quadrature_gbic(const ModelSpec& spec, const LongitudinalDataset& data,
                              double sigma2, double lambda) {
  const double n = static_cast<double>(data.num_subjects());
  struct Piece {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd inv;
    Eigen::VectorXd y;
    double constant;
  };
  std::vector<Piece> pieces;
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  for (const auto& s : data.subjects()) {
    const Eigen::Index ni = s.size();
    Piece p;
    p.phi.resize(ni, 2);
    for (Eigen::Index j = 0; j < ni; ++j) {
      p.phi.row(j) = evaluate_basis(spec.term(0).basis, s.times[j]).transpose();
    }
    const Eigen::MatrixXd S = s.correlation.size() == 0
                                  ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(ni, ni))
                                  : s.correlation;
    p.inv = (sigma2 * S).inverse();
    p.y = s.responses;
    p.constant = -0.5 * static_cast<double>(ni) * kLog2Pi - 0.5 * std::log((sigma2 * S).determinant());
    A += p.phi.transpose() * p.inv * p.phi;
    pieces.push_back(std::move(p));
  }
  auto log_integrand = [&](const Eigen::Vector2d& g) {
    double lf = 0.0;
    for (const auto& p : pieces) {
      const Eigen::VectorXd r = p.y - p.phi * g;
      lf += p.constant - 0.5 * r.dot(p.inv * r);
    }
    return lf + std::log(n * lambda / (2.0 * std::numbers::pi)) - 0.5 * n * lambda * g.squaredNorm();
  };
  // Window of +-12 standard deviations around the posterior mode.
  const Eigen::Vector2d center =
      joint_solution(spec, data, Eigen::VectorXd::Constant(1, lambda), sigma2);
  A += n * lambda * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d cov = A.inverse();
  const int points = 401;
  const double w0 = 12.0 * std::sqrt(cov(0, 0));
  const double w1 = 12.0 * std::sqrt(cov(1, 1));
  const double h0 = 2.0 * w0 / (points - 1);
  const double h1 = 2.0 * w1 / (points - 1);
  const double peak = log_integrand(center);
  double total = 0.0;
  for (int a = 0; a < points; ++a) {
    for (int b = 0; b < points; ++b) {
      const Eigen::Vector2d g(center[0] - w0 + a * h0, center[1] - w1 + b * h1);
      const double wa = (a == 0 || a == points - 1) ? 0.5 : 1.0;
      const double wb = (b == 0 || b == points - 1) ? 0.5 : 1.0;
      total += wa * wb * std::exp(log_integrand(g) - peak);
    }
  }
  return -2.0 * (peak + std::log(total * h0 * h1));
}

}  // namespace vcm::testing
