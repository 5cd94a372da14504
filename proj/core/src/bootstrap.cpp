#include "vcm/bootstrap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "vcm/error.hpp"
#include "vcm/parallel.hpp"
#include "vcm/rng.hpp"

namespace vcm {

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidArgument("quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

CoefficientBand percentile_band(const Eigen::MatrixXd& curves, double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("band level must be in (0, 1)");
  const double tail = 0.5 * (1.0 - level);
  const Eigen::Index g = curves.cols();
  CoefficientBand band{curves.colwise().mean().transpose(), Eigen::VectorXd(g),
                       Eigen::VectorXd(g)};
  std::vector<double> column(static_cast<std::size_t>(curves.rows()));
  for (Eigen::Index j = 0; j < g; ++j) {
    for (Eigen::Index b = 0; b < curves.rows(); ++b) {
      column[static_cast<std::size_t>(b)] = curves(b, j);
    }
    band.lower[j] = quantile(column, tail);
    band.upper[j] = quantile(column, 1.0 - tail);
    // Summation rounding can push the mean an ulp outside a zero-width band.
    const double slack = 1e-12 * (1.0 + std::abs(band.mean[j]));
    if (band.mean[j] < band.lower[j] && band.lower[j] - band.mean[j] < slack) {
      band.mean[j] = band.lower[j];
    } else if (band.mean[j] > band.upper[j] && band.mean[j] - band.upper[j] < slack) {
      band.mean[j] = band.upper[j];
    }
  }
  return band;
}

BandResult bootstrap_bands(const ModelSpec& spec, const LongitudinalDataset& data,
                           const Eigen::VectorXd& lambdas, const Eigen::VectorXd& grid,
                           const FitConfig& config, const BootstrapOptions& options) {
  if (options.B < 2) throw InvalidArgument("bootstrap needs B >= 2");
  if (grid.size() == 0) throw InvalidArgument("bootstrap grid is empty");
  effective_lambdas(spec, lambdas);
  config.validate();

  const std::size_t n = data.num_subjects();
  const auto num_b = static_cast<std::size_t>(options.B);
  const std::size_t max_attempts = 10 * num_b;

  Resampler draw = options.resampler;
  if (!draw) {
    draw = [seed = options.seed](std::size_t b, std::size_t attempt, std::size_t count) {
      Rng rng(derive_seed(seed, b, attempt));
      std::vector<std::size_t> idx(count);
      for (auto& i : idx) i = static_cast<std::size_t>(uniform_index(rng, count));
      return idx;
    };
  }

  BandResult result;
  result.grid = grid;
  result.B = options.B;
  result.curves.assign(spec.num_terms(), Eigen::MatrixXd(options.B, grid.size()));
  std::vector<std::size_t> attempts(num_b, 0);
  std::atomic<std::size_t> total_attempts{0};

  parallel_for(num_b, options.threads, [&](std::size_t b) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (total_attempts.fetch_add(1) >= max_attempts) {
        throw Error("bootstrap: more than " + std::to_string(max_attempts) +
                    " resamples needed; refits keep failing");
      }
      attempts[b] = attempt + 1;
      const LongitudinalDataset resample = data.subset(draw(b, attempt, n));
      FittedModel model;
      try {
        Eigen::VectorXd lam = lambdas;
        if (options.reselect) {
          SelectOptions sel;
          sel.seed = derive_seed(options.seed, b, attempt ^ 0x5E1EC7ULL);
          const auto reports = search_lambdas(spec, resample, options.axis,
                                              {*options.reselect}, config, sel);
          if (!reports[0].has_best()) continue;
          lam = reports[0].best_lambdas();
        }
        model = fit(spec, resample, lam, config);
      } catch (const Error&) {
        continue;
      }
      if (!model.converged) continue;
      for (std::size_t k = 0; k < spec.num_terms(); ++k) {
        result.curves[k].row(static_cast<Eigen::Index>(b)) =
            coefficient_curve(model, spec, k, grid).transpose();
      }
      return;
    }
  });

  result.attempts = 0;
  for (std::size_t a : attempts) result.attempts += static_cast<int>(a);
  for (const auto& c : result.curves) result.bands.push_back(percentile_band(c, options.level));
  return result;
}

}  // namespace vcm
