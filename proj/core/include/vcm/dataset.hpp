#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vcm {

/// Observations of one subject, sorted by time.
struct SubjectRecord {
  std::string id;
  Eigen::VectorXd times;
  Eigen::VectorXd responses;
  /// n_i x p; column k-1 holds covariate x_k.
  Eigen::MatrixXd covariates;
  /// Known within-subject correlation S_i (Sigma_i = sigma^2 S_i). Empty
  /// means identity. Kept with the subject so resampling carries it along.
  Eigen::MatrixXd correlation;

  Eigen::Index size() const noexcept { return times.size(); }
};

class LongitudinalDataset {
 public:
  LongitudinalDataset() = default;
  /// Validates shapes and finiteness; throws DimensionMismatch / InvalidArgument.
  LongitudinalDataset(std::vector<SubjectRecord> subjects, int num_covariates);

  const std::vector<SubjectRecord>& subjects() const noexcept { return subjects_; }
  std::size_t num_subjects() const noexcept { return subjects_.size(); }
  int num_covariates() const noexcept { return p_; }
  /// N = sum of n_i.
  Eigen::Index total_observations() const noexcept { return total_; }
  double min_time() const noexcept { return t_min_; }
  double max_time() const noexcept { return t_max_; }
  Eigen::Index max_subject_size() const noexcept;

  /// New dataset holding the listed subjects (repeats allowed).
  LongitudinalDataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<SubjectRecord> subjects_;
  int p_ = 0;
  Eigen::Index total_ = 0;
  double t_min_ = 0.0;
  double t_max_ = 0.0;
};

/// Long-format CSV: header `subject,time,y,x1,...,xp`. Lines starting with '#'
/// are comments. Subjects are ordered by id (numerically when every id is an
/// integer) and rows are sorted by time within each subject, so row order in
/// the file does not matter.
LongitudinalDataset read_csv(std::istream& in);
LongitudinalDataset load_csv(const std::filesystem::path& path);

/// Inverse of read_csv; numbers use shortest round-trip formatting.
void write_csv(std::ostream& out, const LongitudinalDataset& data);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace vcm
