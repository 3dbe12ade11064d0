#pragma once

#include "orbitmix/gmm_fit.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace orbitmix {

struct ResidualCurve {
    std::vector<int> Ks;                // 1..K_max
    std::vector<double> residuals;      // Euclidean ||psi_hat - Psi(fit_K)||
    std::vector<MixtureParams> fits;
    std::vector<std::string> errors;    // empty string when the fit at K succeeded
    double eta = 0.0;
    int K_hat = 0;
};

/// Fits K = 1..K_max with W = I; fit_{K+1} is warm-started from fit_K's atoms plus one new atom, and the
/// curve is forced nonincreasing (a worse K+1 fit is replaced by fit_K padded with a zero-weight atom).
ResidualCurve residual_curve(const InvariantMap& map, const Eigen::VectorXd& psi_hat, int K_max,
                             const Eigen::VectorXd& sigma2, const FitConfig& config = {});

/// eta_n = tau (sqrt((D + t)/n) + (D + t)/n).
double selection_threshold(long long n, int D, double tau, double t);

/// Smallest K with r(K) <= eta_n, or K_max + 1. t < 0 means log n. Stores eta and K_hat in the curve.
int select_k(ResidualCurve& curve, long long n, int D, double tau = 2.0, double t = -1.0);

struct SimplexMargin {
    Eigen::VectorXd heights;    // h_j: distance from v_j to the affine hull of the others
    Eigen::VectorXd distances;  // w_j h_j
    double gamma = 0.0;         // min_j w_j h_j; +inf when K = 1
};

/// Throws DEGENERATE_SIMPLEX when the vertices are affinely dependent (relative rank tolerance 1e-9).
SimplexMargin simplex_margin(const std::vector<Eigen::VectorXd>& vertices, const Eigen::VectorXd& weights);

struct AtomSet {
    std::vector<Eigen::VectorXd> atoms;
    Eigen::VectorXd weights;
};

/// Merges duplicate atoms, then eliminates along null vectors of [V; 1'] until support <= D + 1.
AtomSet caratheodory_reduce(const std::vector<Eigen::VectorXd>& atoms, const Eigen::VectorXd& weights);

struct DualCertificate {
    Eigen::VectorXd lambda;  // unit normal of the supporting functional
    double offset = 0.0;     // the face is {v : <lambda, v> = offset}
    double eta = 0.0;        // 1 - max over probes of the unnormalized functional
};

/// Affine functional l(v) = <lambda, v - o> equal to 1 on every vertex, with o the probe centroid; probes
/// coinciding with a vertex are skipped. Tries the minimum-norm lambda first and, if that leaves eta <= 0,
/// the eta-maximizing one (minimax over the remaining freedom). Returns nothing unless eta > 0.
std::optional<DualCertificate> dual_certificate(const std::vector<Eigen::VectorXd>& vertices,
                                                const std::vector<Eigen::VectorXd>& probes);

/// Phi images of a per_axis^d grid over [lo, hi], truncated to at most 1e5 points.
std::vector<Eigen::VectorXd> probe_grid(const InvariantMap& map, const Eigen::VectorXd& sigma2,
                                        const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int per_axis = 25);

}  // namespace orbitmix
