#include "vcm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include "vcm/error.hpp"
#include "vcm/parallel.hpp"
#include "vcm/rng.hpp"

namespace vcm {

void SimDesign::validate() const {
  if (n < 2) throw InvalidArgument("simulation needs n >= 2 subjects");
  if (ni_min < 1 || ni_max < ni_min || ni_max > 10000) {
    throw InvalidArgument("observations per subject must satisfy 1 <= min <= max <= 10^4");
  }
  if (replications < 1) throw InvalidArgument("replications must be >= 1");
  if (!(noise_fraction >= 0.0)) throw InvalidArgument("noise fraction must be >= 0");
}

double true_beta1(double t) { return std::sin(std::numbers::pi * t); }
double true_beta2(double t) { return t; }

double noise_sigma(double noise_fraction, double mean_a, double mean_b) {
  constexpr int kGrid = 10000;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int g = 0; g < kGrid; ++g) {
    const double t = static_cast<double>(g) / (kGrid - 1);
    const double x1 = mean_a * std::cos(std::numbers::pi * t) + mean_b;
    const double f = x1 * true_beta1(t) + true_beta2(t);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  return noise_fraction * (hi - lo);
}

SimulatedData generate(const SimDesign& design, int replication) {
  design.validate();
  Rng rng(derive_seed(design.seed, static_cast<std::uint64_t>(replication)));
  std::normal_distribution<double> slope(0.0, 2.0);  // variance 4
  std::uniform_real_distribution<double> level(2.0, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto n = static_cast<std::size_t>(design.n);
  SimulatedData out;
  out.a.resize(n);
  out.b.resize(n);
  std::vector<SubjectRecord> subjects(n);
  const auto span = static_cast<std::uint64_t>(design.ni_max - design.ni_min + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ni = static_cast<Eigen::Index>(design.ni_min + uniform_index(rng, span));
    out.a[i] = slope(rng);
    out.b[i] = level(rng);
    const double subject_x2 = static_cast<double>(uniform_index(rng, 2));

    SubjectRecord& s = subjects[i];
    s.id = std::to_string(i + 1);
    s.times.resize(ni);
    for (Eigen::Index j = 0; j < ni; ++j) s.times[j] = unit(rng);
    std::sort(s.times.begin(), s.times.end());
    s.covariates.resize(ni, 2);
    for (Eigen::Index j = 0; j < ni; ++j) {
      s.covariates(j, 0) = out.a[i] * std::cos(std::numbers::pi * s.times[j]) + out.b[i];
      s.covariates(j, 1) = design.binary == BinaryCovariate::per_subject
                               ? subject_x2
                               : static_cast<double>(uniform_index(rng, 2));
    }
  }

  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += out.a[i];
    mean_b += out.b[i];
  }
  out.sigma = noise_sigma(design.noise_fraction, mean_a / design.n, mean_b / design.n);

  std::normal_distribution<double> noise(0.0, 1.0);
  out.truth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord& s = subjects[i];
    const Eigen::Index ni = s.size();
    Eigen::VectorXd f(ni);
    for (Eigen::Index j = 0; j < ni; ++j) {
      f[j] = s.covariates(j, 0) * true_beta1(s.times[j]) +
             s.covariates(j, 1) * true_beta2(s.times[j]);
    }
    s.responses.resize(ni);
    for (Eigen::Index j = 0; j < ni; ++j) s.responses[j] = f[j] + out.sigma * noise(rng);
    out.truth[i] = std::move(f);
  }
  out.data = LongitudinalDataset(std::move(subjects), 2);
  return out;
}

double amse(const std::vector<Eigen::VectorXd>& predictions,
            const std::vector<Eigen::VectorXd>& truths, AmseNormalizer normalizer) {
  if (predictions.empty()) throw InvalidArgument("AMSE of an empty sample");
  if (predictions.size() != truths.size()) {
    throw DimensionMismatch("predictions and truths cover different subjects");
  }
  double sse = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != truths[i].size()) {
      throw DimensionMismatch("subject " + std::to_string(i) +
                              ": prediction and truth lengths differ");
    }
    sse += (truths[i] - predictions[i]).squaredNorm();
    total += static_cast<double>(truths[i].size());
  }
  if (total == 0.0) throw InvalidArgument("AMSE of an empty sample");
  const double denom = normalizer == AmseNormalizer::printed
                           ? static_cast<double>(predictions.size()) * total
                           : total;
  return sse / denom;
}

ModelSpec simulation_model(const LongitudinalDataset& data, bool intercept) {
  ModelOptions opts;
  opts.order = 1;
  opts.num_basis = 0;
  opts.intercept = intercept;
  opts.explicit_range = true;
  opts.t_min = 0.0;
  opts.t_max = 1.0;
  return make_model_spec(data, opts);
}

ComparisonTable run_comparison(const SimDesign& design,
                               const ComparisonOptions& options) {
  design.validate();
  if (options.criteria.empty()) throw InvalidArgument("no criteria requested");
  const std::size_t num_criteria = options.criteria.size();

  ComparisonTable table;
  table.design = design;
  table.replications.resize(static_cast<std::size_t>(design.replications));

  parallel_for(table.replications.size(), options.threads, [&](std::size_t r) {
    ReplicationResult& result = table.replications[r];
    result.replication = static_cast<int>(r);
    try {
      const SimulatedData sim = generate(design, static_cast<int>(r));
      const ModelSpec spec = simulation_model(sim.data, options.intercept);
      SelectOptions sel;
      sel.folds = options.folds;
      sel.seed = derive_seed(design.seed, r, 0xCF);
      sel.gbic_variant = options.gbic_variant;
      sel.threads = 1;
      const auto reports = search_lambdas(spec, sim.data, options.axis, options.criteria,
                                          options.fit, sel);
      const NormalEquations system(spec, sim.data);
      for (std::size_t c = 0; c < num_criteria; ++c) {
        if (!reports[c].has_best()) return;
        const Eigen::VectorXd& lam = reports[c].best_lambdas();
        const FittedModel model = fit(system, lam, options.fit);
        std::vector<Eigen::VectorXd> preds;
        preds.reserve(sim.data.num_subjects());
        for (const auto& s : sim.data.subjects()) preds.push_back(predict(model, spec, s));
        result.amse.push_back(amse(preds, sim.truth, options.normalizer));
        Eigen::VectorXd cov_lam(spec.num_covariates());
        for (int c2 = 0; c2 < spec.num_covariates(); ++c2) {
          cov_lam[c2] = lam[spec.term_for_covariate(c2)];
        }
        result.lambdas.push_back(std::move(cov_lam));
      }
      result.ok = true;
    } catch (const Error&) {
      result.ok = false;
    }
  });

  std::vector<CriterionSummary> summaries(num_criteria);
  int used = 0;
  for (std::size_t c = 0; c < num_criteria; ++c) {
    summaries[c].criterion = options.criteria[c];
    summaries[c].mean_lambdas = Eigen::VectorXd::Zero(2);
  }
  for (const auto& rep : table.replications) {
    if (!rep.ok) {
      ++table.failures;
      continue;
    }
    ++used;
    for (std::size_t c = 0; c < num_criteria; ++c) {
      summaries[c].mean_amse += rep.amse[c];
      summaries[c].mean_lambdas += rep.lambdas[c];
    }
  }
  for (auto& s : summaries) {
    if (used > 0) {
      s.mean_amse /= used;
      s.mean_lambdas /= used;
    } else {
      s.mean_amse = std::numeric_limits<double>::quiet_NaN();
      s.mean_lambdas.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  table.summaries = std::move(summaries);
  return table;
}

void write_comparison_csv(std::ostream& out, const ComparisonTable& table) {
  const auto& d = table.design;
  out << "# n=" << d.n << " replications=" << d.replications << " seed=" << d.seed
      << " ni=" << d.ni_min << ".." << d.ni_max << " failures=" << table.failures << '\n';
  out << "metric";
  for (const auto& s : table.summaries) out << ',' << to_string(s.criterion);
  out << '\n';
  out << "amse";
  for (const auto& s : table.summaries) out << ',' << format_double(s.mean_amse);
  out << '\n';
  const Eigen::Index p = table.summaries.empty() ? 0 : table.summaries[0].mean_lambdas.size();
  for (Eigen::Index k = 0; k < p; ++k) {
    out << "lambda_" << (k + 1);
    for (const auto& s : table.summaries) out << ',' << format_double(s.mean_lambdas[k]);
    out << '\n';
  }
  out << "replications_used";
  for (std::size_t c = 0; c < table.summaries.size(); ++c) {
    out << ',' << (d.replications - table.failures);
  }
  out << '\n';
}

}  // namespace vcm
