#include "orbitmix/io.hpp"

#include "orbitmix/error.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace orbitmix {

namespace {

double parse_cell(std::string_view cell, std::size_t line) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw Error(ErrorCode::Io, "non-numeric CSV cell '" + std::string(cell) + "' on line " + std::to_string(line));
    }
    return v;
}

Eigen::VectorXd vector_from_json(const Json& j, const char* what) {
    if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be an array");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

}  // namespace

Eigen::MatrixXd parse_csv(const std::string& text, bool header) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (header && lineno == 1) continue;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            row.push_back(parse_cell(std::string_view(line).substr(start, comma - start), lineno));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows[0].size()) {
            throw Error(ErrorCode::Io, "ragged CSV: line " + std::to_string(lineno) + " has " +
                                           std::to_string(row.size()) + " columns");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(ErrorCode::Io, "CSV has no data rows");
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
    f << text;
    if (!f) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

Eigen::MatrixXd read_csv(const std::string& path, bool header) { return parse_csv(read_text(path), header); }

std::string format_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
    if (!header.empty()) os << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
        os << '\n';
    }
    return os.str();
}

void write_csv(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
    write_text(path, format_csv(m, header));
}

ModelSpec model_from_json(const Json& j) {
    ModelSpec spec;
    try {
        spec.group = j.at("group").get<std::string>();
        spec.m_star = j.value("m_star", 4);
        const Json& thetas = j.at("thetas");
        for (const auto& t : thetas) spec.params.thetas.push_back(vector_from_json(t, "theta"));
        if (spec.params.thetas.empty()) throw Error(ErrorCode::InvalidArgument, "model has no components");
        const int K = static_cast<int>(spec.params.thetas.size());
        if (j.contains("K") && j.at("K").get<int>() != K) {
            throw Error(ErrorCode::InvalidArgument, "K disagrees with the number of thetas");
        }
        spec.params.weights = j.contains("weights") ? vector_from_json(j.at("weights"), "weights")
                                                    : Eigen::VectorXd::Constant(K, 1.0 / K);
        const int d = static_cast<int>(spec.params.thetas[0].size());
        const Json& s = j.contains("sigma2") ? j.at("sigma2") : Json(1.0);
        spec.params.sigma2 = s.is_array() ? vector_from_json(s, "sigma2") : isotropic(d, s.get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed model JSON: ") + e.what());
    }
    return spec;
}

Json to_json(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Json to_json(const Eigen::MatrixXd& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
    return a;
}

Json to_json(const std::vector<Eigen::VectorXd>& rows) {
    Json a = Json::array();
    for (const auto& r : rows) a.push_back(to_json(r));
    return a;
}

Json model_to_json(const ModelSpec& m) {
    Json j;
    j["group"] = m.group;
    j["K"] = m.params.K();
    j["thetas"] = to_json(m.params.thetas);
    j["weights"] = to_json(m.params.weights);
    j["sigma2"] = to_json(m.params.sigma2);
    j["m_star"] = m.m_star;
    return j;
}

ModelSpec read_model(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::Io, "cannot parse '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace orbitmix
