#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "vcm/model.hpp"

namespace vcm {

struct SavedModel {
  ModelSpec spec;
  FittedModel model;
  /// Free-form record of the command and seed that produced the model.
  std::string provenance;
};

/// JSON document holding the basis descriptors, penalties, coefficients,
/// sigma^2, lambdas and convergence diagnostics. Doubles round-trip exactly.
void write_model_json(std::ostream& out, const ModelSpec& spec,
                      const FittedModel& model,
                      const std::string& provenance = {});
SavedModel read_model_json(std::istream& in);

void save_model(const std::filesystem::path& path, const ModelSpec& spec,
                const FittedModel& model, const std::string& provenance = {});
SavedModel load_model(const std::filesystem::path& path);

}  // namespace vcm
