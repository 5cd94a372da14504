#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vcm::cli {

/// Runs the `vcm` command line. Artifacts are written to the paths named by
/// the flags; a one-line summary goes to `out`. Failures are reported on
/// `err` as a single JSON object and yield a nonzero status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vcm::cli
