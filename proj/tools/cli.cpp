#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vcm/basis.hpp"
#include "vcm/bootstrap.hpp"
#include "vcm/dataset.hpp"
#include "vcm/error.hpp"
#include "vcm/estimation.hpp"
#include "vcm/model.hpp"
#include "vcm/model_io.hpp"
#include "vcm/parallel.hpp"
#include "vcm/selection.hpp"
#include "vcm/simulation.hpp"

namespace vcm::cli {

namespace {

struct ModelFlags {
  int order = 1;
  std::string num_basis = "auto";
  bool no_intercept = false;
  bool penalize_intercept = false;
  std::string penalty = "identity";

  void add(CLI::App& app) {
    app.add_option("--order", order, "B-spline degree (1 = linear hats)")->check(CLI::NonNegativeNumber);
    app.add_option("--num-basis", num_basis, "basis functions per term, or 'auto' for max n_i");
    app.add_flag("--no-intercept", no_intercept, "drop the intercept function beta_0");
    app.add_flag("--penalize-intercept", penalize_intercept, "apply a penalty to beta_0 too");
    app.add_option("--penalty", penalty, "penalty matrix: identity or second-diff")
        ->check(CLI::IsMember({"identity", "second-diff"}));
  }

  ModelOptions options() const {
    ModelOptions o;
    o.order = order;
    if (num_basis == "auto") {
      o.num_basis = 0;
    } else {
      try {
        std::size_t used = 0;
        o.num_basis = std::stoi(num_basis, &used);
        if (used != num_basis.size() || o.num_basis < 1) throw std::invalid_argument(num_basis);
      } catch (const std::logic_error&) {
        throw InvalidArgument("--num-basis must be a positive integer or 'auto'");
      }
    }
    o.intercept = !no_intercept;
    o.penalize_intercept = penalize_intercept;
    o.penalty = penalty == "identity" ? PenaltyKind::identity : PenaltyKind::second_difference;
    return o;
  }
};

struct FitFlags {
  double tol = FitConfig{}.tol;
  int max_sweeps = FitConfig{}.max_sweeps;
  std::string sigma2_rule = "ml";

  void add(CLI::App& app) {
    app.add_option("--tol", tol, "backfitting tolerance (max coefficient change)")->check(CLI::PositiveNumber);
    app.add_option("--max-sweeps", max_sweeps, "maximum backfitting sweeps")->check(CLI::PositiveNumber);
    app.add_option("--sigma2-rule", sigma2_rule, "sigma^2 update: ml or printed")
        ->check(CLI::IsMember({"ml", "printed"}));
  }

  FitConfig config() const {
    FitConfig c;
    c.tol = tol;
    c.max_sweeps = max_sweeps;
    c.sigma2_rule = sigma2_rule == "ml" ? Sigma2Rule::ml : Sigma2Rule::printed;
    return c;
  }
};

std::string provenance_line(const std::vector<std::string>& args) {
  std::string line = "vcm";
  for (const auto& a : args) line += " " + a;
  return line;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << contents;
  if (!out) throw Error("failed writing " + path);
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InvalidArgument(flag + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw InvalidArgument(flag + " is empty");
  return out;
}

/// Expands user lambdas (one per penalized term, or a single value) to the
/// full per-term vector.
Eigen::VectorXd expand_lambdas(const ModelSpec& spec, const std::vector<double>& given) {
  const auto penalized = spec.penalized_terms();
  if (given.size() != penalized.size() && given.size() != 1) {
    throw InvalidArgument("--lambda needs " + std::to_string(penalized.size()) +
                          " values (one per penalized term) or a single value");
  }
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.num_terms()));
  for (std::size_t j = 0; j < penalized.size(); ++j) {
    lam[static_cast<Eigen::Index>(penalized[j])] = given.size() == 1 ? given[0] : given[j];
  }
  return lam;
}

int term_label(const Term& t) { return t.covariate == kIntercept ? 0 : t.covariate + 1; }

Eigen::VectorXd uniform_grid(double lo, double hi, int points) {
  if (points < 1) throw InvalidArgument("--grid must be >= 1");
  if (points == 1) return Eigen::VectorXd::Constant(1, lo);
  return Eigen::VectorXd::LinSpaced(points, lo, hi);
}

std::string curves_csv(const std::string& provenance, const ModelSpec& spec,
                       const FittedModel& model, int points) {
  const Eigen::VectorXd grid =
      uniform_grid(spec.term(0).basis.t_min(), spec.term(0).basis.t_max(), points);
  std::ostringstream out;
  out << "# " << provenance << '\n' << "t,k,beta\n";
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const Eigen::VectorXd curve = coefficient_curve(model, spec, k, grid);
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
      out << format_double(grid[g]) << ',' << term_label(spec.term(k)) << ','
          << format_double(curve[g]) << '\n';
    }
  }
  return out.str();
}

std::string lambda_header(const ModelSpec& spec) {
  std::string h;
  for (std::size_t k : spec.penalized_terms()) {
    h += "lambda_" + std::to_string(term_label(spec.term(k))) + ",";
  }
  return h;
}

std::vector<Criterion> parse_criteria(const std::string& text) {
  std::vector<Criterion> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_criterion(item));
  if (out.empty()) throw InvalidArgument("--criteria is empty");
  return out;
}

GbicVariant parse_variant(const std::string& s) {
  return s == "rederived" ? GbicVariant::rederived : GbicVariant::printed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Varying-coefficient models with regularized B-spline bases"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "worker threads (VCM_THREADS overrides)")
      ->check(CLI::NonNegativeNumber);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a model at fixed lambdas");
  std::string fit_data, fit_lambda, fit_out = "model.json", fit_curves;
  int fit_grid = 200;
  ModelFlags fit_model;
  FitFlags fit_flags;
  fit_cmd->add_option("--data", fit_data, "long-format CSV")->required();
  fit_cmd->add_option("--lambda", fit_lambda, "comma-separated lambdas, one per penalized term")
      ->required();
  fit_cmd->add_option("--out", fit_out, "model JSON output");
  fit_cmd->add_option("--curves", fit_curves, "coefficient curves CSV output");
  fit_cmd->add_option("--grid", fit_grid, "points in the curve grid")->check(CLI::PositiveNumber);
  fit_model.add(*fit_cmd);
  fit_flags.add(*fit_cmd);

  // select
  auto* sel_cmd = app.add_subcommand("select", "choose lambdas by GIC, GBIC or CV");
  std::string sel_data, sel_criterion = "gbic", sel_grid = "1e-6:1e2:9", sel_report = "report.csv",
                        sel_out, sel_variant = "printed";
  int sel_folds = 5;
  std::uint64_t sel_seed = 42;
  ModelFlags sel_model;
  FitFlags sel_flags;
  sel_cmd->add_option("--data", sel_data, "long-format CSV")->required();
  sel_cmd->add_option("--criterion", sel_criterion, "gic, gbic or cv")
      ->check(CLI::IsMember({"gic", "gbic", "cv"}));
  sel_cmd->add_option("--grid", sel_grid, "per-term log grid lo:hi:points");
  sel_cmd->add_option("--folds", sel_folds, "cross-validation folds")->check(CLI::Range(2, 1000000));
  sel_cmd->add_option("--seed", sel_seed, "fold assignment seed");
  sel_cmd->add_option("--report", sel_report, "criterion report CSV output");
  sel_cmd->add_option("--out", sel_out, "optional model JSON at the selected lambdas");
  sel_cmd->add_option("--gbic-variant", sel_variant, "printed or rederived")
      ->check(CLI::IsMember({"printed", "rederived"}));
  sel_model.add(*sel_cmd);
  sel_flags.add(*sel_cmd);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo comparison of selectors");
  SimDesign design;
  design.replications = 1000;
  std::string sim_criteria = "gic,gbic,cv", sim_out = "table.csv", sim_grid = "1e-6:1e2:9",
              sim_x2 = "per-subject", sim_amse = "printed", sim_data_out, sim_variant = "printed";
  int sim_folds = 5;
  bool sim_no_intercept = false;
  FitFlags sim_flags;
  sim_cmd->add_option("--n", design.n, "subjects per data set")->check(CLI::Range(2, 1000000));
  sim_cmd->add_option("--reps", design.replications, "replications")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", design.seed, "base seed");
  sim_cmd->add_option("--criteria", sim_criteria, "comma list of gic, gbic, cv");
  sim_cmd->add_option("--out", sim_out, "comparison table CSV output");
  sim_cmd->add_option("--grid", sim_grid, "per-term log grid lo:hi:points");
  sim_cmd->add_option("--folds", sim_folds, "cross-validation folds")->check(CLI::Range(2, 1000000));
  sim_cmd->add_option("--x2", sim_x2, "per-subject or per-observation binary covariate")
      ->check(CLI::IsMember({"per-subject", "per-observation"}));
  sim_cmd->add_option("--amse-normalizer", sim_amse, "printed (n * sum n_i) or per-observation")
      ->check(CLI::IsMember({"printed", "per-observation"}));
  sim_cmd->add_option("--gbic-variant", sim_variant, "printed or rederived")
      ->check(CLI::IsMember({"printed", "rederived"}));
  sim_cmd->add_option("--data-out", sim_data_out, "write replication 0 as a CSV data set");
  sim_cmd->add_flag("--no-intercept", sim_no_intercept, "fit without beta_0");
  sim_flags.add(*sim_cmd);

  // bootstrap
  auto* boot_cmd = app.add_subcommand("bootstrap", "subject-level bootstrap bands");
  std::string boot_data, boot_model, boot_out = "bands.csv", boot_reselect;
  int boot_b = 100, boot_grid = 200;
  std::uint64_t boot_seed = 11;
  double boot_level = 0.95;
  FitFlags boot_flags;
  boot_cmd->add_option("--data", boot_data, "long-format CSV")->required();
  boot_cmd->add_option("--model", boot_model, "model JSON from fit/select")->required();
  boot_cmd->add_option("--B", boot_b, "bootstrap resamples")->check(CLI::Range(2, 1000000));
  boot_cmd->add_option("--grid", boot_grid, "points in the time grid")->check(CLI::PositiveNumber);
  boot_cmd->add_option("--seed", boot_seed, "resampling seed");
  boot_cmd->add_option("--level", boot_level, "pointwise band level")->check(CLI::Range(0.01, 0.999));
  boot_cmd->add_option("--reselect", boot_reselect, "re-select lambda per resample (gic, gbic, cv)")
      ->check(CLI::IsMember({"gic", "gbic", "cv"}));
  boot_cmd->add_option("--out", boot_out, "bands CSV output");
  boot_flags.add(*boot_cmd);

  // basis dump
  auto* basis_cmd = app.add_subcommand("basis", "B-spline basis utilities");
  basis_cmd->require_subcommand(1);
  auto* dump_cmd = basis_cmd->add_subcommand("dump", "print the basis matrix as CSV");
  double dump_lo = 0.0, dump_hi = 1.0;
  int dump_m = 10, dump_order = 1, dump_grid = 11;
  std::string dump_times, dump_out;
  dump_cmd->add_option("--t-min", dump_lo, "interval start");
  dump_cmd->add_option("--t-max", dump_hi, "interval end");
  dump_cmd->add_option("--num-basis", dump_m, "number of basis functions");
  dump_cmd->add_option("--order", dump_order, "B-spline degree");
  dump_cmd->add_option("--grid", dump_grid, "evenly spaced points over the interval");
  dump_cmd->add_option("--times", dump_times, "explicit comma-separated time points");
  dump_cmd->add_option("--out", dump_out, "write to a file instead of stdout");

  std::vector<std::string> argv_store{"vcm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::string provenance = provenance_line(args);
  std::string subcommand = app.get_subcommands().front()->get_name();
  const int threads = resolve_threads(threads_flag);

  try {
    if (*fit_cmd) {
      const LongitudinalDataset data = load_csv(fit_data);
      const ModelSpec spec = make_model_spec(data, fit_model.options());
      const Eigen::VectorXd lam = expand_lambdas(spec, parse_list(fit_lambda, "--lambda"));
      const FittedModel model = fit(spec, data, lam, fit_flags.config());
      std::ostringstream json_text;
      write_model_json(json_text, spec, model, provenance);
      write_file(fit_out, json_text.str());
      if (!fit_curves.empty()) write_file(fit_curves, curves_csv(provenance, spec, model, fit_grid));
      out << "fit: converged=" << (model.converged ? "true" : "false")
          << " sweeps=" << model.iterations << " sigma2=" << format_double(model.sigma2)
          << " loglik=" << format_double(log_likelihood(model, spec, data)) << " model="
          << fit_out << '\n';
    } else if (*sel_cmd) {
      const LongitudinalDataset data = load_csv(sel_data);
      const ModelSpec spec = make_model_spec(data, sel_model.options());
      const FitConfig config = sel_flags.config();
      SelectOptions opts;
      opts.folds = sel_folds;
      opts.seed = sel_seed;
      opts.gbic_variant = parse_variant(sel_variant);
      opts.threads = threads;
      const Criterion criterion = parse_criterion(sel_criterion);
      auto reports = search_lambdas(spec, data, parse_lambda_axis(sel_grid), {criterion},
                                    config, opts);
      const CriterionReport& report = reports.at(0);
      if (!report.has_best()) {
        throw Error("criterion " + sel_criterion + ": every lambda grid point failed");
      }
      std::ostringstream csv;
      csv << "# " << provenance << " gbic_variant=" << sel_variant << '\n'
          << lambda_header(spec) << "value,converged\n";
      for (std::size_t g = 0; g < report.grid.size(); ++g) {
        for (std::size_t k : spec.penalized_terms()) {
          csv << format_double(report.grid[g][static_cast<Eigen::Index>(k)]) << ',';
        }
        csv << format_double(report.values[g]) << ',' << (report.converged[g] ? 1 : 0) << '\n';
      }
      write_file(sel_report, csv.str());
      if (!sel_out.empty()) {
        const FittedModel model = fit(spec, data, report.best_lambdas(), config);
        std::ostringstream json_text;
        write_model_json(json_text, spec, model, provenance);
        write_file(sel_out, json_text.str());
      }
      out << "select: criterion=" << sel_criterion << " points=" << report.grid.size()
          << " best=" << report.best_index << " lambda=";
      bool first = true;
      for (std::size_t k : spec.penalized_terms()) {
        out << (first ? "" : ",") << format_double(report.best_lambdas()[static_cast<Eigen::Index>(k)]);
        first = false;
      }
      out << " value=" << format_double(report.values[report.best_index])
          << " report=" << sel_report << '\n';
    } else if (*sim_cmd) {
      design.binary = sim_x2 == "per-subject" ? BinaryCovariate::per_subject
                                              : BinaryCovariate::per_observation;
      ComparisonOptions opts;
      opts.criteria = parse_criteria(sim_criteria);
      opts.axis = parse_lambda_axis(sim_grid);
      opts.folds = sim_folds;
      opts.fit = sim_flags.config();
      opts.intercept = !sim_no_intercept;
      opts.gbic_variant = parse_variant(sim_variant);
      opts.normalizer = sim_amse == "printed" ? AmseNormalizer::printed
                                              : AmseNormalizer::per_observation;
      opts.threads = threads;
      if (!sim_data_out.empty()) {
        const SimulatedData sim = generate(design, 0);
        std::ostringstream csv;
        csv << "# " << provenance << " replication=0\n";
        write_csv(csv, sim.data);
        write_file(sim_data_out, csv.str());
      }
      const ComparisonTable table = run_comparison(design, opts);
      std::ostringstream csv;
      csv << "# " << provenance << " gbic_variant=" << sim_variant << " amse_normalizer="
          << sim_amse << '\n';
      write_comparison_csv(csv, table);
      write_file(sim_out, csv.str());
      out << "simulate: n=" << design.n << " reps=" << design.replications
          << " failures=" << table.failures;
      for (const auto& s : table.summaries) {
        out << " amse_" << to_string(s.criterion) << '=' << format_double(s.mean_amse);
      }
      out << " table=" << sim_out << '\n';
    } else if (*boot_cmd) {
      const LongitudinalDataset data = load_csv(boot_data);
      const SavedModel saved = load_model(boot_model);
      BootstrapOptions opts;
      opts.B = boot_b;
      opts.seed = boot_seed;
      opts.level = boot_level;
      opts.threads = threads;
      if (!boot_reselect.empty()) opts.reselect = parse_criterion(boot_reselect);
      const auto& basis0 = saved.spec.term(0).basis;
      const Eigen::VectorXd grid = uniform_grid(basis0.t_min(), basis0.t_max(), boot_grid);
      const BandResult bands = bootstrap_bands(saved.spec, data, saved.model.lambdas, grid,
                                               boot_flags.config(), opts);
      std::ostringstream csv;
      csv << "# " << provenance << " attempts=" << bands.attempts << '\n' << "t,k,mean,lo,hi\n";
      for (std::size_t k = 0; k < saved.spec.num_terms(); ++k) {
        const auto& band = bands.bands[k];
        for (Eigen::Index g = 0; g < grid.size(); ++g) {
          csv << format_double(grid[g]) << ',' << term_label(saved.spec.term(k)) << ','
              << format_double(band.mean[g]) << ',' << format_double(band.lower[g]) << ','
              << format_double(band.upper[g]) << '\n';
        }
      }
      write_file(boot_out, csv.str());
      out << "bootstrap: B=" << bands.B << " attempts=" << bands.attempts
          << " bands=" << boot_out << '\n';
    } else if (*dump_cmd) {
      subcommand = "basis dump";
      const BSplineBasis basis = make_uniform_basis(dump_lo, dump_hi, dump_m, dump_order);
      std::vector<double> times;
      if (!dump_times.empty()) {
        times = parse_list(dump_times, "--times");
      } else {
        const Eigen::VectorXd g = uniform_grid(dump_lo, dump_hi, dump_grid);
        times.assign(g.data(), g.data() + g.size());
      }
      const Eigen::MatrixXd phi = basis_matrix(basis, times);
      std::ostringstream csv;
      csv << "# " << provenance << '\n' << 't';
      for (int m = 1; m <= basis.size(); ++m) csv << ",phi_" << m;
      csv << '\n';
      for (std::size_t j = 0; j < times.size(); ++j) {
        csv << format_double(times[j]);
        for (int m = 0; m < basis.size(); ++m) {
          csv << ',' << format_double(phi(static_cast<Eigen::Index>(j), m));
        }
        csv << '\n';
      }
      if (dump_out.empty()) {
        out << csv.str();
      } else {
        write_file(dump_out, csv.str());
      }
    }
  } catch (const std::exception& e) {
    nlohmann::json j;
    j["error"] = e.what();
    j["subcommand"] = subcommand;
    if (const auto* rd = dynamic_cast<const RankDeficiency*>(&e)) j["term"] = rd->term();
    if (const auto* pe = dynamic_cast<const ParseError*>(&e)) j["line"] = pe->line();
    err << j.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vcm::cli
