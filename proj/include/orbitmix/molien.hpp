#pragma once

#include "orbitmix/group_action.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace orbitmix {

enum class MolienSource { Generic, ClosedForm };

struct MolienSeries {
    std::vector<long long> coeffs;  // coeffs[m] = [t^m] M_G(t)
    MolienSource source = MolienSource::Generic;
    std::string family;             // spec string of the group or closed-form family

    int max_degree() const { return static_cast<int>(coeffs.size()) - 1; }
};

struct DimBudget {
    long long inclusive = 0;  // degrees 0..m*
    long long exclusive = 0;  // degrees 1..m*
};

/// Largest allowed |rounded - average| before declaring the average non-integral.
inline constexpr double kMolienResidualTol = 1e-6;

/// Group average of 1/det(I - t g), expanded to degree max_degree.
MolienSeries molien_generic(const FiniteGroup& G, int max_degree);

/// Closed-form generating functions. Accepts every group spec plus
/// "platonic:T", "platonic:O", "platonic:I" and "gmpn:m,p,n".
MolienSeries molien_family(std::string_view family, int max_degree);
MolienSeries molien_family(const GroupFamily& family, int max_degree);

DimBudget dim_budget(const MolienSeries& series, int m_star);

/// Coefficients of det(I - t Q) (constant term first), by Faddeev-LeVerrier.
std::vector<double> det_one_minus_tq(const Eigen::MatrixXd& Q);

/// Power series of num/den to degree n; den[0] must be nonzero.
std::vector<double> series_divide(const std::vector<double>& num, const std::vector<double>& den, int n);

}  // namespace orbitmix
