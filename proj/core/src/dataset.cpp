#include "vcm/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string_view>

#include "vcm/error.hpp"

namespace vcm {

LongitudinalDataset::LongitudinalDataset(std::vector<SubjectRecord> subjects,
                                         int num_covariates)
    : subjects_(std::move(subjects)), p_(num_covariates) {
  if (p_ < 0) throw InvalidArgument("number of covariates must be >= 0");
  if (subjects_.empty()) throw InvalidArgument("dataset has no subjects");
  t_min_ = std::numeric_limits<double>::infinity();
  t_max_ = -std::numeric_limits<double>::infinity();
  for (const auto& s : subjects_) {
    const Eigen::Index ni = s.times.size();
    if (ni < 1) {
      throw InvalidArgument("subject '" + s.id + "' has no observations");
    }
    if (s.responses.size() != ni || s.covariates.rows() != ni ||
        s.covariates.cols() != p_) {
      throw DimensionMismatch("subject '" + s.id +
                              "' has inconsistent row counts or covariates");
    }
    if (!s.times.allFinite() || !s.responses.allFinite() ||
        !s.covariates.allFinite()) {
      throw InvalidArgument("subject '" + s.id + "' has non-finite values");
    }
    if (s.correlation.size() != 0) {
      if (s.correlation.rows() != ni || s.correlation.cols() != ni) {
        throw DimensionMismatch("subject '" + s.id +
                                "' correlation matrix has the wrong size");
      }
      if (!s.correlation.isApprox(s.correlation.transpose(), 1e-12)) {
        throw InvalidArgument("subject '" + s.id +
                              "' correlation matrix is not symmetric");
      }
      if (s.correlation.llt().info() != Eigen::Success) {
        throw InvalidArgument("subject '" + s.id +
                              "' correlation matrix is not positive definite");
      }
    }
    t_min_ = std::min(t_min_, s.times.minCoeff());
    t_max_ = std::max(t_max_, s.times.maxCoeff());
    total_ += ni;
  }
}

Eigen::Index LongitudinalDataset::max_subject_size() const noexcept {
  Eigen::Index m = 0;
  for (const auto& s : subjects_) m = std::max(m, s.size());
  return m;
}

LongitudinalDataset LongitudinalDataset::subset(
    const std::vector<std::size_t>& indices) const {
  std::vector<SubjectRecord> picked;
  picked.reserve(indices.size());
  for (std::size_t idx : indices) picked.push_back(subjects_.at(idx));
  return LongitudinalDataset(std::move(picked), p_);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos
                                                ? std::string_view::npos
                                                : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r'))
      f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_real(std::string_view field, std::size_t line) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(line, "cannot parse '" + std::string(field) + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line, "non-finite value '" + std::string(field) + "'");
  }
  return value;
}

bool is_integer_id(const std::string& id) {
  if (id.empty()) return false;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), v);
  return ec == std::errc() && ptr == id.data() + id.size();
}

struct Row {
  double time;
  double y;
  std::vector<double> x;
};

}  // namespace

LongitudinalDataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header_line = line;
    header = split_fields(header_line);
    break;
  }
  if (header.empty()) throw ParseError(line_no, "empty file: no header row");
  if (header.size() < 3 || header[0] != "subject" || header[1] != "time" ||
      header[2] != "y") {
    throw ParseError(line_no, "header must start with subject,time,y");
  }
  const int p = static_cast<int>(header.size()) - 3;
  for (int k = 0; k < p; ++k) {
    if (header[3 + k] != "x" + std::to_string(k + 1)) {
      throw ParseError(line_no, "expected covariate column x" +
                                    std::to_string(k + 1));
    }
  }

  std::map<std::string, std::vector<Row>> groups;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) +
                                    " fields, got " +
                                    std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(line_no, "empty subject id");
    Row row{parse_real(fields[1], line_no), parse_real(fields[2], line_no), {}};
    row.x.reserve(p);
    for (int k = 0; k < p; ++k) row.x.push_back(parse_real(fields[3 + k], line_no));
    groups[std::string(fields[0])].push_back(std::move(row));
  }
  if (groups.empty()) throw ParseError(line_no, "no data rows");

  std::vector<std::string> ids;
  for (const auto& [id, rows] : groups) ids.push_back(id);
  if (std::all_of(ids.begin(), ids.end(), is_integer_id)) {
    std::stable_sort(ids.begin(), ids.end(), [](const auto& a, const auto& b) {
      return std::stoll(a) < std::stoll(b);
    });
  }

  std::vector<SubjectRecord> subjects;
  subjects.reserve(ids.size());
  for (const auto& id : ids) {
    auto& rows = groups[id];
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.time != b.time) return a.time < b.time;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    const auto ni = static_cast<Eigen::Index>(rows.size());
    SubjectRecord s{id, Eigen::VectorXd(ni), Eigen::VectorXd(ni),
                    Eigen::MatrixXd(ni, p), {}};
    for (Eigen::Index j = 0; j < ni; ++j) {
      s.times[j] = rows[j].time;
      s.responses[j] = rows[j].y;
      for (int k = 0; k < p; ++k) s.covariates(j, k) = rows[j].x[k];
    }
    subjects.push_back(std::move(s));
  }
  return LongitudinalDataset(std::move(subjects), p);
}

LongitudinalDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in);
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf.data(), ptr);
}

void write_csv(std::ostream& out, const LongitudinalDataset& data) {
  out << "subject,time,y";
  for (int k = 1; k <= data.num_covariates(); ++k) out << ",x" << k;
  out << '\n';
  for (const auto& s : data.subjects()) {
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      out << s.id << ',' << format_double(s.times[j]) << ','
          << format_double(s.responses[j]);
      for (int k = 0; k < data.num_covariates(); ++k) {
        out << ',' << format_double(s.covariates(j, k));
      }
      out << '\n';
    }
  }
}

}  // namespace vcm
