#include "orbitmix/orbit_metric.hpp"

#include "orbitmix/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace orbitmix {

namespace {

// Kuhn's augmenting path search on the threshold graph {(i,j) : C(i,j) <= r}.
bool augment(const Eigen::MatrixXd& C, double r, int i, std::vector<int>& match_col, std::vector<char>& seen) {
    const int K = static_cast<int>(C.cols());
    for (int j = 0; j < K; ++j) {
        if (C(i, j) > r || seen[j]) continue;
        seen[j] = 1;
        if (match_col[j] < 0 || augment(C, r, match_col[j], match_col, seen)) {
            match_col[j] = i;
            return true;
        }
    }
    return false;
}

// Returns the row->column assignment if a perfect matching exists at threshold r.
std::optional<std::vector<int>> perfect_matching(const Eigen::MatrixXd& C, double r) {
    const int K = static_cast<int>(C.rows());
    std::vector<int> match_col(K, -1);
    for (int i = 0; i < K; ++i) {
        std::vector<char> seen(K, 0);
        if (!augment(C, r, i, match_col, seen)) return std::nullopt;
    }
    std::vector<int> assignment(K);
    for (int j = 0; j < K; ++j) assignment[match_col[j]] = j;
    return assignment;
}

void check_square(const Eigen::MatrixXd& C) {
    if (C.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty cost matrix");
    if (C.rows() != C.cols()) throw Error(ErrorCode::DimensionMismatch, "cost matrix must be square");
}

}  // namespace

OrbitMultiset::OrbitMultiset(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& reps) : group_(&G) {
    reps_.reserve(reps.size());
    for (const auto& r : reps) {
        if (r.size() != G.dim()) throw Error(ErrorCode::DimensionMismatch, "orbit representative has wrong length");
        reps_.push_back(G.canonical_rep(r));
    }
}

double orbit_distance(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_prime) {
    if (theta.size() != G.dim() || theta_prime.size() != G.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "orbit_distance: vector length differs from group dimension");
    }
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < G.order(); ++i) {
        best = std::min(best, (theta - G.apply(i, theta_prime)).squaredNorm());
    }
    return std::sqrt(best);
}

Eigen::MatrixXd cost_matrix(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& a,
                            const std::vector<Eigen::VectorXd>& b) {
    Eigen::MatrixXd C(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) C(i, j) = orbit_distance(G, a[i], b[j]);
    }
    return C;
}

Eigen::MatrixXd cost_matrix(const OrbitMultiset& a, const OrbitMultiset& b) {
    if (&a.group() != &b.group() && a.group().spec() != b.group().spec()) {
        throw Error(ErrorCode::InvalidArgument, "multisets live under different groups");
    }
    return cost_matrix(a.group(), a.reps(), b.reps());
}

double hausdorff_multiset(const Eigen::MatrixXd& C) {
    check_square(C);
    return std::max(C.rowwise().minCoeff().maxCoeff(), C.colwise().minCoeff().maxCoeff());
}

BottleneckResult bottleneck_matching(const Eigen::MatrixXd& C) {
    check_square(C);
    std::vector<double> values(C.data(), C.data() + C.size());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    // The maximal threshold always admits a matching, so the search is over [0, size-1].
    std::size_t lo = 0, hi = values.size() - 1;
    while (lo < hi) {
        std::size_t mid = (lo + hi) / 2;
        if (perfect_matching(C, values[mid])) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    BottleneckResult out;
    out.value = values[lo];
    out.assignment = *perfect_matching(C, values[lo]);
    out.exact_at_hausdorff = perfect_matching(C, hausdorff_multiset(C)).has_value();
    return out;
}

double bottleneck_brute_force(const Eigen::MatrixXd& C) {
    check_square(C);
    std::vector<int> perm(C.rows());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double worst = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) worst = std::max(worst, C(i, perm[i]));
        best = std::min(best, worst);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double bottleneck_orbit_error(const FiniteGroup& G, const std::vector<Eigen::VectorXd>& a,
                              const std::vector<Eigen::VectorXd>& b) {
    return bottleneck_matching(cost_matrix(G, a, b)).value;
}

}  // namespace orbitmix
