#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vcm/error.hpp"
#include "vcm/model.hpp"
#include "vcm/model_io.hpp"

namespace {

using vcm::testing::kLog2Pi;

vcm::ModelSpec small_spec(const vcm::LongitudinalDataset& data, int num_basis, int order = 1) {
  vcm::ModelOptions opts;
  opts.num_basis = num_basis;
  opts.order = order;
  opts.t_min = 0.0;
  opts.t_max = 1.0;
  opts.explicit_range = true;
  return vcm::make_model_spec(data, opts);
}

vcm::FittedModel random_model(const vcm::ModelSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd lambdas(spec.num_terms());
  for (auto& l : lambdas) l = unit(rng);
  vcm::FittedModel m = vcm::zero_model(spec, 0.5 + unit(rng), lambdas);
  Eigen::VectorXd g(spec.total_basis());
  for (auto& v : g) v = normal(rng);
  m.set_stacked(spec, g);
  return m;
}

TEST(DesignBlocks, UnitCovariatesGiveBasisMatrix) {
  std::mt19937_64 rng(1);
  auto data = vcm::testing::random_dataset(rng, 3, 4, 6, 2);
  std::vector<vcm::SubjectRecord> subjects = data.subjects();
  for (auto& s : subjects) s.covariates.setOnes();
  const vcm::LongitudinalDataset ones(subjects, 2);
  const auto spec = small_spec(ones, 4);
  for (const auto& s : ones.subjects()) {
    const auto blocks = vcm::design_blocks(spec, s);
    ASSERT_EQ(blocks.size(), 3u);
    const std::vector<double> t(s.times.begin(), s.times.end());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      EXPECT_EQ(blocks[k], vcm::basis_matrix(spec.term(k).basis, t));
    }
  }
}

TEST(DesignBlocks, ZeroCovariateGivesZeroBlock) {
  std::mt19937_64 rng(2);
  auto data = vcm::testing::random_dataset(rng, 2, 5, 5, 2);
  std::vector<vcm::SubjectRecord> subjects = data.subjects();
  for (auto& s : subjects) s.covariates.col(1).setZero();
  const vcm::LongitudinalDataset zeroed(subjects, 2);
  const auto spec = small_spec(zeroed, 3);
  const int k = spec.term_for_covariate(1);
  for (const auto& s : zeroed.subjects()) {
    EXPECT_TRUE(vcm::design_blocks(spec, s)[k].isZero(0.0));
  }
}

TEST(DesignBlocks, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  const auto data = vcm::testing::random_dataset(rng, 4, 3, 7, 3);
  const auto spec = small_spec(data, 5, 2);
  for (const auto& s : data.subjects()) {
    const auto blocks = vcm::design_blocks(spec, s);
    for (std::size_t k = 0; k < spec.num_terms(); ++k) {
      const auto& term = spec.term(k);
      for (Eigen::Index j = 0; j < s.size(); ++j) {
        const double x = term.covariate == vcm::kIntercept ? 1.0 : s.covariates(j, term.covariate);
        for (int m = 0; m < term.basis.size(); ++m) {
          const double phi = vcm::testing::cox_de_boor(term.basis.knots(), m,
                                                        term.basis.order(), s.times[j]);
          EXPECT_NEAR(blocks[k](j, m), x * phi, 1e-14) << "k " << k;
        }
      }
    }
  }
}

TEST(Predict, ZeroCoefficients) {
  std::mt19937_64 rng(4);
  const auto data = vcm::testing::random_dataset(rng, 3, 4, 6, 2);
  const auto spec = small_spec(data, 4);
  const auto m = vcm::zero_model(spec, 1.0, Eigen::VectorXd::Zero(3));
  for (const auto& s : data.subjects()) EXPECT_TRUE(vcm::predict(m, spec, s).isZero(0.0));
}

TEST(Predict, ConstantInterceptCurve) {
  std::mt19937_64 rng(5);
  const auto data = vcm::testing::random_dataset(rng, 3, 4, 6, 0);
  const auto spec = small_spec(data, 6, 2);
  auto m = vcm::zero_model(spec, 1.0, Eigen::VectorXd::Zero(1));
  m.gammas[0].setConstant(2.5);
  for (const auto& s : data.subjects()) {
    const Eigen::VectorXd yhat = vcm::predict(m, spec, s);
    for (auto v : yhat) EXPECT_NEAR(v, 2.5, 1e-12);
  }
}

TEST(Predict, MatchesBlockSum) {
  std::mt19937_64 rng(6);
  const auto data = vcm::testing::random_dataset(rng, 4, 3, 8, 2);
  const auto spec = small_spec(data, 5);
  const auto m = random_model(spec, rng);
  for (const auto& s : data.subjects()) {
    const auto blocks = vcm::design_blocks(spec, s);
    Eigen::VectorXd want = Eigen::VectorXd::Zero(s.size());
    for (std::size_t k = 0; k < blocks.size(); ++k) want += blocks[k] * m.gammas[k];
    EXPECT_LT((vcm::predict(m, spec, s) - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CoefficientCurve, ZeroAndIdentity) {
  std::mt19937_64 rng(7);
  const auto data = vcm::testing::random_dataset(rng, 2, 4, 4, 1);
  const auto spec = small_spec(data, 6);
  auto m = vcm::zero_model(spec, 1.0, Eigen::VectorXd::Zero(2));
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(101, 0.0, 1.0);
  EXPECT_TRUE(vcm::coefficient_curve(m, spec, 1, grid).isZero(0.0));

  const auto& knots = spec.term(1).basis.knots();
  for (int j = 0; j < 6; ++j) m.gammas[1][j] = knots[j + 1];
  const Eigen::VectorXd curve = vcm::coefficient_curve(m, spec, 1, grid);
  EXPECT_LT((curve - grid).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(vcm::coefficient_curve(m, spec, 2, grid), vcm::InvalidArgument);
}

TEST(CoefficientCurve, MatchesBasisMatrix) {
  std::mt19937_64 rng(8);
  const auto data = vcm::testing::random_dataset(rng, 2, 4, 4, 2);
  const auto spec = small_spec(data, 7, 3);
  const auto m = random_model(spec, rng);
  const Eigen::VectorXd grid = Eigen::VectorXd::Random(40).cwiseAbs();
  const std::vector<double> g(grid.begin(), grid.end());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const Eigen::VectorXd want = vcm::basis_matrix(spec.term(k).basis, g) * m.gammas[k];
    EXPECT_LT((vcm::coefficient_curve(m, spec, k, grid) - want).cwiseAbs().maxCoeff(), 1e-13);
  }
}

vcm::LongitudinalDataset single_point(double y) {
  vcm::SubjectRecord s;
  s.id = "1";
  s.times = Eigen::VectorXd::Constant(1, 0.5);
  s.responses = Eigen::VectorXd::Constant(1, y);
  s.covariates.resize(1, 0);
  return vcm::LongitudinalDataset({s}, 0);
}

TEST(LogLikelihood, SingleObservationAtMean) {
  const auto data = single_point(0.0);
  vcm::ModelOptions opts;
  opts.num_basis = 2;
  opts.t_max = 1.0;
  opts.explicit_range = true;
  const auto spec = vcm::make_model_spec(data, opts);
  const auto m = vcm::zero_model(spec, 1.0, Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(vcm::log_likelihood(m, spec, data), -0.5 * kLog2Pi, 1e-15);
}

TEST(LogLikelihood, PerfectFit) {
  std::mt19937_64 rng(9);
  auto data = vcm::testing::random_dataset(rng, 4, 3, 6, 1);
  const auto spec = small_spec(data, 4);
  const auto m = random_model(spec, rng);
  std::vector<vcm::SubjectRecord> subjects = data.subjects();
  for (auto& s : subjects) s.responses = vcm::predict(m, spec, s);
  const vcm::LongitudinalDataset exact(subjects, 1);
  auto m1 = m;
  m1.sigma2 = 1.0;
  const double N = static_cast<double>(exact.total_observations());
  EXPECT_NEAR(vcm::log_likelihood(m1, spec, exact), -0.5 * N * kLog2Pi, 1e-10);
}

TEST(LogLikelihood, MatchesDensityOracle) {
  std::mt19937_64 rng(10);
  for (bool correlated : {false, true}) {
    const auto data = vcm::testing::random_dataset(rng, 5, 3, 7, 2, correlated);
    const auto spec = small_spec(data, 4);
    const auto m = random_model(spec, rng);
    double want = 0.0;
    for (const auto& s : data.subjects()) {
      const double li = vcm::testing::loop_subject_loglik(spec, s, m.stacked(), m.sigma2);
      EXPECT_NEAR(vcm::subject_log_likelihood(m, spec, s), li, 1e-10 * std::abs(li));
      want += li;
    }
    EXPECT_NEAR(vcm::log_likelihood(m, spec, data), want, 1e-10 * std::abs(want));
  }
}

TEST(PenalizedLogLikelihood, ReducesToLikelihood) {
  std::mt19937_64 rng(11);
  const auto data = vcm::testing::random_dataset(rng, 4, 3, 6, 2);
  const auto spec = small_spec(data, 4);
  auto m = random_model(spec, rng);
  const double l = vcm::log_likelihood(m, spec, data);

  auto zero_lambda = m;
  zero_lambda.lambdas.setZero();
  EXPECT_EQ(vcm::penalized_log_likelihood(zero_lambda, spec, data), l);

  auto zero_pen = m;
  for (std::size_t k : spec.penalized_terms()) zero_pen.gammas[k].setZero();
  EXPECT_EQ(vcm::penalized_log_likelihood(zero_pen, spec, data),
            vcm::log_likelihood(zero_pen, spec, data));
}

TEST(PenalizedLogLikelihood, MatchesQuadraticForm) {
  std::mt19937_64 rng(12);
  const auto data = vcm::testing::random_dataset(rng, 6, 3, 6, 2);
  vcm::ModelOptions opts;
  opts.num_basis = 5;
  opts.penalty = vcm::PenaltyKind::second_difference;
  opts.penalize_intercept = true;
  const auto spec = vcm::make_model_spec(data, opts);
  const auto m = random_model(spec, rng);
  const double n = static_cast<double>(data.num_subjects());
  const double pen = 2.0 * vcm::testing::half_penalty(spec, m.lambdas, m.stacked());
  EXPECT_NEAR(vcm::penalty_quadratic(m, spec), pen, 1e-12 * pen);
  const double want = vcm::log_likelihood(m, spec, data) - 0.5 * n * pen;
  EXPECT_NEAR(vcm::penalized_log_likelihood(m, spec, data), want, 1e-12 * std::abs(want));
}

TEST(Penalty, SecondDifferenceHasTwoDimensionalNullSpace) {
  const Eigen::MatrixXd D = vcm::make_penalty(vcm::PenaltyKind::second_difference, 6);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(D);
  EXPECT_NEAR(eig.eigenvalues()[0], 0.0, 1e-12);
  EXPECT_NEAR(eig.eigenvalues()[1], 0.0, 1e-12);
  EXPECT_GT(eig.eigenvalues()[2], 1e-3);
  const Eigen::VectorXd line = Eigen::VectorXd::LinSpaced(6, -1.0, 4.0);
  EXPECT_LT((D * line).norm(), 1e-12);
}

TEST(ModelSpec, RejectsIndefinitePenalty) {
  auto basis = vcm::make_uniform_basis(0, 1, 3, 1);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
  bad(1, 1) = -1.0;
  vcm::Term t{vcm::kIntercept, basis, bad, true};
  EXPECT_THROW(vcm::ModelSpec({t}, 0), vcm::InvalidArgument);
  t.penalty = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_THROW(vcm::ModelSpec({t}, 0), vcm::DimensionMismatch);
}

TEST(ModelSpec, RejectsNegativeLambda) {
  std::mt19937_64 rng(13);
  const auto data = vcm::testing::random_dataset(rng, 2, 3, 3, 1);
  const auto spec = small_spec(data, 3);
  EXPECT_THROW(vcm::effective_lambdas(spec, Eigen::Vector2d(0.1, -1.0)), vcm::InvalidArgument);
  EXPECT_THROW(vcm::effective_lambdas(spec, Eigen::VectorXd::Zero(3)), vcm::DimensionMismatch);
  // The intercept is unpenalized by default, so its lambda is ignored.
  EXPECT_EQ(vcm::effective_lambdas(spec, Eigen::Vector2d(5.0, 0.25)), Eigen::Vector2d(0.0, 0.25));
}

TEST(ModelJson, RoundTripIsExact) {
  std::mt19937_64 rng(14);
  const auto data = vcm::testing::random_dataset(rng, 4, 3, 6, 2);
  vcm::ModelOptions opts;
  opts.num_basis = 5;
  opts.order = 2;
  opts.penalty = vcm::PenaltyKind::second_difference;
  const auto spec = vcm::make_model_spec(data, opts);
  auto m = random_model(spec, rng);
  m.iterations = 17;
  m.converged = true;
  m.final_delta = 3.25e-9;
  std::stringstream buf;
  vcm::write_model_json(buf, spec, m, "vcm fit --data x.csv");
  const auto saved = vcm::read_model_json(buf);
  EXPECT_EQ(saved.provenance, "vcm fit --data x.csv");
  ASSERT_EQ(saved.spec.num_terms(), spec.num_terms());
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    EXPECT_EQ(saved.spec.term(k).basis, spec.term(k).basis);
    EXPECT_EQ(saved.spec.term(k).penalty, spec.term(k).penalty);
    EXPECT_EQ(saved.spec.term(k).covariate, spec.term(k).covariate);
    EXPECT_EQ(saved.spec.term(k).penalized, spec.term(k).penalized);
    EXPECT_EQ(saved.model.gammas[k], m.gammas[k]);
  }
  EXPECT_EQ(saved.model.sigma2, m.sigma2);
  EXPECT_EQ(saved.model.lambdas, m.lambdas);
  EXPECT_EQ(saved.model.iterations, 17);
  EXPECT_TRUE(saved.model.converged);
  EXPECT_EQ(saved.model.final_delta, 3.25e-9);
}

TEST(ModelJson, RejectsGarbage) {
  std::stringstream buf("{\"format\": \"something-else\"}");
  EXPECT_THROW(vcm::read_model_json(buf), vcm::ParseError);
  std::stringstream broken("{not json");
  EXPECT_THROW(vcm::read_model_json(broken), vcm::ParseError);
}

}  // namespace
