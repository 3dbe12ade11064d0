#pragma once

#include "orbitmix/folded_model.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace orbitmix {

enum class EstimatorKind { Mean, Mom, Catoni };

/// How the Catoni scale alpha is set per coordinate.
enum class CatoniScale {
    Unit,    // alpha = c sqrt(log(2D/delta)/n), c = 1
    Robust,  // c_j = 1 / (1.4826 MAD_j), so alpha is dimensionless in each coordinate
};

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::Mean;
    int blocks = 1;
    double delta = 0.05;
    CatoniScale scale = CatoniScale::Robust;

    /// "mean", "mom:B", "catoni:delta".
    static EstimatorSpec parse(std::string_view s);
    std::string to_string() const;
};

/// Median of B contiguous block means of size floor(n/B); the remainder rows are dropped.
Eigen::VectorXd mom_mean(const Eigen::MatrixXd& values, int B);

/// Coordinatewise Catoni M-estimate with alpha_j = c_j sqrt(log(2D/delta)/n). `c` may be empty (all 1).
Eigen::VectorXd catoni_mean(const Eigen::MatrixXd& values, double delta, const Eigen::VectorXd& c = {});

/// Catoni influence psi(x) = sign(x) log(1 + |x| + x^2/2).
double catoni_psi(double x);

/// Per-column scale 1.4826 * MAD (falls back to the standard deviation, then 1, when zero).
Eigen::VectorXd robust_scale(const Eigen::MatrixXd& values);

Eigen::VectorXd aggregate(const Eigen::MatrixXd& values, const EstimatorSpec& spec);

InvariantStack empirical_stack(const InvariantMap& map, const Eigen::MatrixXd& data, const EstimatorSpec& spec = {});

enum class CovMode { Iid, Hac };

struct CovSpec {
    CovMode mode = CovMode::Iid;
    int bandwidth = -1;       // < 0: plug-in floor(4 (n/100)^{2/9})
    double ridge = -1.0;      // < 0: relative ridge kRelativeRidge * Diag(Sigma); else ridge * I

    /// "iid", "hac", "hac:b".
    static CovSpec parse(std::string_view s);
};

/// Default ridge: Sigma + 1e-8 Diag(Sigma).
inline constexpr double kRelativeRidge = 1e-8;

struct CovEstimate {
    Eigen::MatrixXd matrix;
    CovMode mode = CovMode::Iid;
    int bandwidth = 0;
    double ridge = 0.0;
    bool relative_ridge = false;  // ridge multiplies the diagonal instead of adding ridge * I
};

int default_hac_bandwidth(long long n);

/// Covariance of the feature rows (n x D), centered at the sample mean.
CovEstimate covariance(const Eigen::MatrixXd& features, const CovSpec& spec = {});
CovEstimate covariance(const InvariantMap& map, const Eigen::MatrixXd& data, const CovSpec& spec = {});

}  // namespace orbitmix
