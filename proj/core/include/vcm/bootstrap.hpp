#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "vcm/dataset.hpp"
#include "vcm/estimation.hpp"
#include "vcm/model.hpp"
#include "vcm/selection.hpp"

namespace vcm {

/// Returns the subject indices (with replacement) for resample `b`,
/// attempt `attempt`, drawn from `n` subjects.
using Resampler = std::function<std::vector<std::size_t>(
    std::size_t b, std::size_t attempt, std::size_t n)>;

struct BootstrapOptions {
  int B = 100;
  std::uint64_t seed = 11;
  double level = 0.95;
  int threads = 1;
  /// Overrides the seeded uniform subject resampler.
  Resampler resampler;
  /// Re-select lambda on every resample with this criterion instead of
  /// holding it fixed.
  std::optional<Criterion> reselect;
  LambdaAxis axis;
};

struct CoefficientBand {
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct BandResult {
  Eigen::VectorXd grid;
  /// Bootstrap curves per term: B x grid.size().
  std::vector<Eigen::MatrixXd> curves;
  /// Bands at the requested level, one per term.
  std::vector<CoefficientBand> bands;
  int B = 0;
  /// Resamples drawn in total, including redraws after failed refits.
  int attempts = 0;
};

/// Percentile band at `level` from B x G bootstrap curves (linear
/// interpolation between order statistics).
CoefficientBand percentile_band(const Eigen::MatrixXd& curves, double level);

/// Empirical quantile of `values` (type-7 interpolation); prob in [0, 1].
double quantile(std::vector<double> values, double prob);

/// Subject-level bootstrap: resample n subjects with replacement, refit,
/// evaluate every coefficient curve on `grid`. Refits that fail or do not
/// converge are redrawn; more than 10 B attempts in total is an error.
BandResult bootstrap_bands(const ModelSpec& spec, const LongitudinalDataset& data,
                           const Eigen::VectorXd& lambdas, const Eigen::VectorXd& grid,
                           const FitConfig& config = {},
                           const BootstrapOptions& options = {});

}  // namespace vcm
