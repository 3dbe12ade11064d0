#pragma once

#include "orbitmix/folded_model.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace orbitmix {

using Json = nlohmann::ordered_json;

/// Numeric CSV, one observation per row. With header = true the first line is skipped.
Eigen::MatrixXd read_csv(const std::string& path, bool header = false);
Eigen::MatrixXd parse_csv(const std::string& text, bool header = false);
std::string format_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});
void write_csv(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});

/// {group, K, thetas, weights, sigma2, m_star}; sigma2 may be a scalar or a per-coordinate array.
struct ModelSpec {
    std::string group;
    MixtureParams params;
    int m_star = 4;
};

ModelSpec model_from_json(const Json& j);
Json model_to_json(const ModelSpec& m);
ModelSpec read_model(const std::string& path);

Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);
Json to_json(const std::vector<Eigen::VectorXd>& rows);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace orbitmix
