#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ksve/koopman.hpp"

namespace ksve {

namespace {

nlohmann::json to_json(const MatrixXd& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw std::runtime_error(std::string("model field '") + field + "' is not a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw std::runtime_error(std::string("model field '") + field + "' has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = j[r][c].get<double>();
  }
  return a;
}

}  // namespace

void save_model(const KoopmanModel<double>& model, std::ostream& out) {
  nlohmann::json j;
  j["format"] = "ksve-koopman-model/1";
  j["m"] = model.m;
  j["tau"] = model.tau;
  j["svd_rank_used"] = model.svd_rank_used;
  j["fit_residuals"] = {{"state_fro", model.fit_residuals.state_fro},
                        {"output_fro", model.fit_residuals.output_fro}};
  j["A"] = to_json(model.A);
  j["B"] = to_json(model.B);
  j["C"] = to_json(model.C);
  out << j.dump(2) << '\n';
}

KoopmanModel<double> load_model(std::istream& in) {
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "ksve-koopman-model/1") {
    throw std::runtime_error("not a ksve Koopman model dump");
  }
  KoopmanModel<double> model;
  model.m = j.at("m").get<int>();
  model.tau = j.at("tau").get<int>();
  model.svd_rank_used = j.at("svd_rank_used").get<int>();
  model.fit_residuals.state_fro = j.at("fit_residuals").at("state_fro").get<double>();
  model.fit_residuals.output_fro = j.at("fit_residuals").at("output_fro").get<double>();
  model.A = matrix_from_json(j.at("A"), "A");
  model.B = matrix_from_json(j.at("B"), "B");
  model.C = matrix_from_json(j.at("C"), "C");
  return model;
}

}  // namespace ksve
