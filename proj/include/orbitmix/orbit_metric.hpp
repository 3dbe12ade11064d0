#pragma once

#include "orbitmix/group_action.hpp"

#include <Eigen/Dense>

#include <vector>

namespace orbitmix {

inline constexpr double kOrbitEqualTol = 1e-9;

/// K orbit representatives under a shared group; reps are stored canonicalized.
class OrbitMultiset {
public:
    OrbitMultiset(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& reps);

    const FiniteGroup& group() const { return *group_; }
    const std::vector<Eigen::VectorXd>& reps() const { return reps_; }
    std::size_t size() const { return reps_.size(); }

private:
    const FiniteGroup* group_;
    std::vector<Eigen::VectorXd> reps_;
};

struct BottleneckResult {
    double value = 0.0;
    std::vector<int> assignment;  // assignment[i] = column matched to row i
    bool exact_at_hausdorff = false;
};

/// min_g ||theta - g theta'||.
double orbit_distance(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_prime);

/// c_ij = orbit_distance(a_i, b_j).
Eigen::MatrixXd cost_matrix(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& a,
                            const std::vector<Eigen::VectorXd>& b);
Eigen::MatrixXd cost_matrix(const OrbitMultiset& a, const OrbitMultiset& b);

double hausdorff_multiset(const Eigen::MatrixXd& C);

BottleneckResult bottleneck_matching(const Eigen::MatrixXd& C);

/// Exhaustive K! search; reference implementation for small K.
double bottleneck_brute_force(const Eigen::MatrixXd& C);

/// Convenience: bottleneck orbit error between two parameter lists.
double bottleneck_orbit_error(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& a,
                              const std::vector<Eigen::VectorXd>& b);

}  // namespace orbitmix
