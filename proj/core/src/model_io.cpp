#include "vcm/model_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "vcm/error.hpp"

namespace vcm {

using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(vector_to_json(m.row(r).transpose()));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index size) {
  Eigen::MatrixXd m(size, size);
  if (j.size() != static_cast<std::size_t>(size)) {
    throw ParseError(0, "penalty matrix has the wrong number of rows");
  }
  for (Eigen::Index r = 0; r < size; ++r) {
    const Eigen::VectorXd row = vector_from_json(j.at(static_cast<std::size_t>(r)));
    if (row.size() != size) throw ParseError(0, "penalty row has the wrong length");
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace

void write_model_json(std::ostream& out, const ModelSpec& spec,
                      const FittedModel& model, const std::string& provenance) {
  json doc;
  doc["format"] = "vcm-model/1";
  doc["provenance"] = provenance;
  doc["num_covariates"] = spec.num_covariates();
  json terms = json::array();
  for (std::size_t k = 0; k < spec.num_terms(); ++k) {
    const Term& t = spec.term(k);
    json jt;
    jt["name"] = t.name();
    jt["covariate"] = t.covariate;
    jt["penalized"] = t.penalized;
    jt["basis"] = {{"order", t.basis.order()},
                   {"t_min", t.basis.t_min()},
                   {"t_max", t.basis.t_max()},
                   {"interior_knots", t.basis.interior_knots()},
                   {"num_basis", t.basis.size()}};
    jt["penalty"] = matrix_to_json(t.penalty);
    jt["gamma"] = vector_to_json(model.gammas.at(k));
    jt["lambda"] = model.lambdas[static_cast<Eigen::Index>(k)];
    terms.push_back(std::move(jt));
  }
  doc["terms"] = std::move(terms);
  doc["sigma2"] = model.sigma2;
  doc["sigma2_fixed"] = model.sigma2_fixed;
  doc["sigma2_clamped"] = model.sigma2_clamped;
  doc["iterations"] = model.iterations;
  doc["converged"] = model.converged;
  doc["final_delta"] = model.final_delta;
  out << doc.dump(2) << '\n';
}

SavedModel read_model_json(std::istream& in) {
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("invalid model JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "vcm-model/1") {
      throw ParseError(0, "unsupported model format");
    }
    const int p = doc.at("num_covariates").get<int>();
    std::vector<Term> terms;
    FittedModel model;
    const auto& jterms = doc.at("terms");
    model.lambdas.resize(static_cast<Eigen::Index>(jterms.size()));
    Eigen::Index k = 0;
    for (const auto& jt : jterms) {
      const auto& jb = jt.at("basis");
      BSplineBasis basis(jb.at("t_min").get<double>(), jb.at("t_max").get<double>(),
                         jb.at("order").get<int>(),
                         jb.at("interior_knots").get<std::vector<double>>());
      Eigen::MatrixXd omega = matrix_from_json(jt.at("penalty"), basis.size());
      terms.push_back(Term{jt.at("covariate").get<int>(), std::move(basis),
                           std::move(omega), jt.at("penalized").get<bool>()});
      model.gammas.push_back(vector_from_json(jt.at("gamma")));
      model.lambdas[k++] = jt.at("lambda").get<double>();
    }
    ModelSpec spec(std::move(terms), p);
    for (std::size_t t = 0; t < spec.num_terms(); ++t) {
      if (model.gammas[t].size() != spec.term(t).basis.size()) {
        throw ParseError(0, "gamma length does not match basis for " +
                                spec.term(t).name());
      }
    }
    model.sigma2 = doc.at("sigma2").get<double>();
    model.sigma2_fixed = doc.value("sigma2_fixed", false);
    model.sigma2_clamped = doc.value("sigma2_clamped", false);
    model.iterations = doc.value("iterations", 0);
    model.converged = doc.value("converged", false);
    model.final_delta = doc.value("final_delta", 0.0);
    return SavedModel{std::move(spec), std::move(model),
                      doc.value("provenance", std::string{})};
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("malformed model JSON: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelSpec& spec,
                const FittedModel& model, const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_model_json(out, spec, model, provenance);
}

SavedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_model_json(in);
}

}  // namespace vcm
