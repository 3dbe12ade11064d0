#pragma once

#include "orbitmix/folded_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace orbitmix {

enum class StepRule { Fixed, Armijo };
enum class ThetaStep { Gradient, GaussNewton };

struct FitConfig {
    int max_iter = 500;
    double grad_tol = 1e-8;
    StepRule step_rule = StepRule::Armijo;
    double step_size = 1.0;        // fixed step, or first Armijo trial
    double armijo_beta = 0.5;
    double armijo_c = 1e-4;
    ThetaStep theta_step = ThetaStep::GaussNewton;
    double initial_damping = 1e-3;  // Levenberg nu, relative to the mean diagonal of J'WPJ
    int align_every = 1;
    int restarts = 20;
    std::uint64_t seed = 0;
    /// Explicit starting points; each entry holds K means. Tried before the random restarts.
    std::vector<std::vector<Eigen::VectorXd>> init;
    /// Box for random restarts; empty means [-5, 5]^d.
    Eigen::VectorXd box_lo, box_hi;
    bool record_trajectory = true;
};

/// Box [-q, q] with q_j the 0.95-quantile of |x_j|.
void set_box_from_data(FitConfig& config, const Eigen::MatrixXd& data);

struct TrajectoryPoint {
    double objective = 0.0;
    double grad_norm = 0.0;
    double residual_w = 0.0;
};

struct QuotientFisher {
    Eigen::MatrixXd G;           // chart Jacobian, D x (Kd + K - 1)
    Eigen::MatrixXd I_Q;         // G' W G
    double sigma_min = 0.0;      // smallest eigenvalue of I_Q
    double cond = 0.0;           // eigenvalue ratio of I_Q
    double jac_sigma_min = 0.0;  // smallest singular value of G
    double stability_constant = 0.0;  // 2 / jac_sigma_min
};

struct JTest {
    double J = 0.0;
    int df = 0;
    std::optional<double> p_value;
};

struct FitReport {
    MixtureParams params;
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<std::vector<int>> active_sets;  // W-step support per iteration
    int restarts_run = 0;
    std::string message;
};

/// min 1/2 ||psi - M w||_W^2 over the simplex, by active-set KKT solves. Throws COLLINEAR when the
/// Gram matrix of the free columns is numerically singular.
Eigen::VectorXd weight_step(const Eigen::MatrixXd& M, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W);

/// Profiled objective f(Theta) = min_w L(Theta, w) and its gradient -w_k J_k' W r.
struct ProfiledValue {
    double objective = 0.0;
    Eigen::VectorXd weights;
    Eigen::VectorXd residual;
    Eigen::VectorXd gradient;  // stacked over k, length K d
};
ProfiledValue profiled_objective(const InvariantMap& map, const std::vector<Eigen::VectorXd>& thetas,
                                 const Eigen::VectorXd& sigma2, const Eigen::VectorXd& psi_hat,
                                 const Eigen::MatrixXd& W, bool with_gradient = true);

FitReport fit(const InvariantMap& map, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W, int K,
              const Eigen::VectorXd& sigma2, const FitConfig& config = {});

/// Chart xi = (theta_1..theta_K, a_1..a_{K-1}); w_K = 1 - sum a.
Eigen::VectorXd to_chart(const MixtureParams& p);
MixtureParams from_chart(const Eigen::VectorXd& xi, int K, int d, const Eigen::VectorXd& sigma2);
/// Psi(xi) and its D x q Jacobian G in the chart.
Eigen::VectorXd chart_map(const InvariantMap& map, const Eigen::VectorXd& xi, int K, const Eigen::VectorXd& sigma2);
Eigen::MatrixXd chart_jacobian(const InvariantMap& map, const MixtureParams& p);

using ChartMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Newton correction xi + (G'WG)^{-1} G'W (psi_hat - Psi(xi)) for any chart map.
Eigen::VectorXd one_step_chart(const ChartMap& Psi, const Eigen::MatrixXd& G, const Eigen::VectorXd& xi,
                               const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W);
MixtureParams one_step(const InvariantMap& map, const MixtureParams& start, const Eigen::VectorXd& psi_hat,
                       const Eigen::MatrixXd& W);

struct BiasCorrection {
    Eigen::VectorXd xi;        // corrected chart point
    Eigen::VectorXd b;         // curvature vector
    bool applied = false;
    std::string message;
};

/// b = 1/2 sum_r (G' S^{-1} e_r) tr(H_r I_Q^{-1}) with I_Q = G' S^{-1} G; returns xi + I_Q^{-1} b / n.
BiasCorrection bias_correct_chart(const ChartMap& Psi, const Eigen::MatrixXd& G, const Eigen::VectorXd& xi,
                                  const Eigen::MatrixXd& Sigma_hat, long long n);
/// Hessians H_r of each output of Psi by central second differences, step 1e-4 (1 + |xi_i|).
std::vector<Eigen::MatrixXd> chart_hessians(const ChartMap& Psi, const Eigen::VectorXd& xi);
MixtureParams bias_correct(const InvariantMap& map, const MixtureParams& fitted, const Eigen::MatrixXd& Sigma_hat,
                           long long n, std::string* message = nullptr);

QuotientFisher quotient_fisher_diag(const InvariantMap& map, const MixtureParams& p, const Eigen::MatrixXd& W);
QuotientFisher quotient_fisher_from_jacobian(const Eigen::MatrixXd& G, const Eigen::MatrixXd& W);

/// J = n r' W r with df = D - K d - (K - 1).
JTest j_test(const InvariantMap& map, const MixtureParams& p, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W,
             long long n);
JTest j_test_from_residual(const Eigen::VectorXd& residual, const Eigen::MatrixXd& W, long long n, int df);

/// r = s_min^{-1} sqrt(chi2_{D, 1-alpha} / n).
double confidence_radius(double s_min, int D, long long n, double alpha);

/// Smallest singular value of W^{1/2} G, the scale used by confidence_radius.
double whitened_jacobian_smin(const Eigen::MatrixXd& G, const Eigen::MatrixXd& W);

struct GreedyStep {
    std::vector<int> degrees;
    double sigma_min = 0.0;
    std::optional<double> gmm_ic;
    std::optional<JTest> j;
};

struct GreedyResult {
    std::vector<int> selected;
    std::vector<GreedyStep> visited;
};

using WeightFactory = std::function<Eigen::MatrixXd(const InvariantMap&)>;

/// Greedily adds the candidate degree maximizing sigma_min(G' W G) at the probe parameters. When data
/// is supplied, GMM-IC = J + kappa df (kappa = log n) is reported per visited set.
GreedyResult greedy_moment_select(const FiniteGroup& G, const std::vector<int>& candidates,
                                  const std::vector<int>& base, int budget, const MixtureParams& probe,
                                  const WeightFactory& weight = {}, const Eigen::MatrixXd* data = nullptr);

/// Reorders est's components by the bottleneck assignment to ref and moves each theta to the group image
/// nearest its reference, so chart coordinates of the two are comparable.
MixtureParams align_to(const FiniteGroup& G, const MixtureParams& est, const MixtureParams& ref);

/// (Sigma_hat + ridge I)^{-1}; ridge < 0 uses the relative ridge Sigma_hat + 1e-8 Diag(Sigma_hat).
Eigen::MatrixXd inverse_weight(const Eigen::MatrixXd& Sigma_hat, double ridge = -1.0);

}  // namespace orbitmix
