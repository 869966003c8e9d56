#pragma once

#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace effort {

// Matrices are written as row-major nested arrays.
nlohmann::json mat_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd mat_from_json(const nlohmann::json& j, const std::string& what);
nlohmann::json vec_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vec_from_json(const nlohmann::json& j, const std::string& what);

// Dumps with 17 significant digits so doubles round-trip.
std::string dump_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// printf("%.17g")
std::string fmt_double(double x);

}  // namespace effort
