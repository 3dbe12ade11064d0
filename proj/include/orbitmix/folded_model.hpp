#pragma once

#include "orbitmix/group_action.hpp"
#include "orbitmix/sym_tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <vector>

namespace orbitmix {

inline constexpr int kMaxIsserlisOrder = 8;

/// K Gaussian components with known diagonal covariance, observed after folding by G.
struct MixtureParams {
    std::vector<Eigen::VectorXd> thetas;
    Eigen::VectorXd weights;
    Eigen::VectorXd sigma2;  // diagonal of the component covariance

    int K() const { return static_cast<int>(thetas.size()); }
    int d() const { return thetas.empty() ? static_cast<int>(sigma2.size()) : static_cast<int>(thetas[0].size()); }

    /// Throws on bad shapes, off-simplex weights, nonpositive variances or, if G is given, a covariance
    /// that is not G-invariant.
    void validate(const FiniteGroup* G = nullptr) const;
};

/// Expands a scalar sigma^2 to a d-vector.
Eigen::VectorXd isotropic(int d, double sigma2);

bool covariance_is_invariant(const FiniteGroup& G, const Eigen::VectorXd& sigma2);

/// n x d matrix; row i = g_i z_i with z_i ~ N(theta_{k_i}, diag(sigma2)), k_i ~ w, g_i ~ Unif(G).
Eigen::MatrixXd sample(const MixtureParams& params, const FiniteGroup& G, int n, std::uint64_t seed);

double folded_density(const MixtureParams& params, const FiniteGroup& G, const Eigen::VectorXd& x);

/// E[(mu + s Z)^k] for k = 0..kmax.
std::vector<double> gaussian_raw_moments_1d(double mu, double var, int kmax);

/// E[X^{(x)m}] for X ~ N(mu, diag(sigma2)), in canonical coordinates.
SymTensor gaussian_moment_tensor(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma2, int m);

/// Invariant-coordinate stack of a law, with the degree layout.
struct InvariantStack {
    std::vector<int> degrees;
    std::vector<int> offsets;  // offsets[b] = first coordinate of degree block b; offsets.back() = size
    Eigen::VectorXd values;

    int size() const { return static_cast<int>(values.size()); }
    Eigen::VectorXd block(std::size_t b) const { return values.segment(offsets[b], offsets[b + 1] - offsets[b]); }
};

/// Phi(theta) = concatenated invariant coordinates of Gaussian moment tensors over a set of degrees,
/// plus the per-observation feature map psi(x).
class InvariantMap {
public:
    InvariantMap(const FiniteGroup& G, std::vector<int> degrees);
    static InvariantMap up_to(const FiniteGroup& G, int m_star);

    const FiniteGroup& group() const { return *group_; }
    int d() const { return group_->dim(); }
    int dim() const { return offsets_.back(); }
    const std::vector<int>& degrees() const { return degrees_; }
    const std::vector<int>& offsets() const { return offsets_; }
    int block_dim(std::size_t b) const { return offsets_[b + 1] - offsets_[b]; }

    Eigen::VectorXd phi(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const;
    /// D x d Jacobian by central differences, h_i = 1e-5 (1 + |theta_i|).
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const;
    /// Exact Jacobian from d/dmu E[(mu+sZ)^k] = k E[(mu+sZ)^{k-1}].
    Eigen::MatrixXd jacobian_analytic(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const;

    Eigen::VectorXd features(const Eigen::VectorXd& x) const;
    /// n x D matrix of psi(x_i).
    Eigen::MatrixXd feature_matrix(const Eigen::MatrixXd& data) const;

    /// sum_k w_k Phi(theta_k).
    Eigen::VectorXd mixture_stack(const MixtureParams& params) const;
    /// D x K matrix with columns Phi(theta_k).
    Eigen::MatrixXd atom_matrix(const std::vector<Eigen::VectorXd>& thetas, const Eigen::VectorXd& sigma2) const;

    InvariantStack wrap(Eigen::VectorXd values) const;

private:
    std::shared_ptr<const FiniteGroup> group_;
    std::vector<int> degrees_;
    std::vector<int> offsets_;
    std::vector<std::shared_ptr<const InvariantBasis>> bases_;
};

InvariantStack phi_theta(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2, int m_star);
Eigen::MatrixXd phi_jacobian(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2,
                             int m_star);

}  // namespace orbitmix
