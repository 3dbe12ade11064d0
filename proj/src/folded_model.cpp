#include "orbitmix/folded_model.hpp"

#include "orbitmix/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace orbitmix {

namespace {

// Moment tables mom[i][k] = E[(mu_i + s_i Z)^k], k = 0..m.
std::vector<std::vector<double>> moment_tables(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma2, int m) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < mu.size(); ++i) out.push_back(gaussian_raw_moments_1d(mu[i], sigma2[i], m));
    return out;
}

// Canonical coordinates of E[X^{(x)m}] from per-coordinate moment tables.
Eigen::VectorXd moment_coords(const std::vector<std::vector<double>>& mom, int d, int m) {
    const auto& t = multi_indices(d, m);
    Eigen::VectorXd out(t.size());
    for (int a = 0; a < t.size(); ++a) {
        const auto& idx = t.index[a];
        double v = 1.0;
        std::size_t k = 0;
        while (k < idx.size()) {
            std::size_t run = k;
            while (run < idx.size() && idx[run] == idx[k]) ++run;
            v *= mom[idx[k]][run - k];
            k = run;
        }
        out[a] = v;
    }
    return out;
}

// d/dmu_i of the canonical moment coordinates.
Eigen::VectorXd moment_coords_derivative(const std::vector<std::vector<double>>& mom, int d, int m, int i) {
    const auto& t = multi_indices(d, m);
    Eigen::VectorXd out(t.size());
    for (int a = 0; a < t.size(); ++a) {
        const auto& idx = t.index[a];
        double v = 1.0;
        std::size_t k = 0;
        while (k < idx.size()) {
            std::size_t run = k;
            while (run < idx.size() && idx[run] == idx[k]) ++run;
            const int c = static_cast<int>(run - k);
            v *= idx[k] == i ? c * mom[idx[k]][c - 1] : mom[idx[k]][c];
            k = run;
        }
        // Coordinates that do not involve i have zero derivative.
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) v = 0.0;
        out[a] = v;
    }
    return out;
}

}  // namespace

void MixtureParams::validate(const FiniteGroup* G) const {
    if (thetas.empty()) throw Error(ErrorCode::InvalidArgument, "mixture needs at least one component");
    const int dd = static_cast<int>(thetas[0].size());
    for (const auto& t : thetas) {
        if (t.size() != dd) throw Error(ErrorCode::DimensionMismatch, "component means differ in length");
        if (!t.allFinite()) throw Error(ErrorCode::InvalidArgument, "component mean is not finite");
    }
    if (weights.size() != K()) throw Error(ErrorCode::DimensionMismatch, "weights length differs from K");
    if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-12) {
        throw Error(ErrorCode::InvalidArgument, "weights must lie on the simplex");
    }
    if (sigma2.size() != dd) throw Error(ErrorCode::DimensionMismatch, "sigma2 length differs from d");
    if (sigma2.minCoeff() <= 0.0) throw Error(ErrorCode::InvalidArgument, "sigma2 entries must be positive");
    if (G) {
        if (G->dim() != dd) throw Error(ErrorCode::DimensionMismatch, "group dimension differs from d");
        if (!covariance_is_invariant(*G, sigma2)) {
            throw Error(ErrorCode::InvalidArgument, "diagonal covariance is not invariant under the group");
        }
    }
}

Eigen::VectorXd isotropic(int d, double sigma2) { return Eigen::VectorXd::Constant(d, sigma2); }

bool covariance_is_invariant(const FiniteGroup& G, const Eigen::VectorXd& sigma2) {
    const Eigen::MatrixXd S = sigma2.asDiagonal();
    const double scale = sigma2.cwiseAbs().maxCoeff();
    for (int i = 0; i < G.order(); ++i) {
        const auto& Q = G.matrix(i);
        if ((Q * S * Q.transpose() - S).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + scale)) return false;
    }
    return true;
}

Eigen::MatrixXd sample(const MixtureParams& params, const FiniteGroup& G, int n, std::uint64_t seed) {
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample size must be >= 1");
    params.validate(&G);
    std::mt19937_64 rng(seed);
    std::discrete_distribution<int> pick(params.weights.data(), params.weights.data() + params.weights.size());
    std::uniform_int_distribution<int> elem(0, G.order() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int d = params.d();
    const Eigen::VectorXd sd = params.sigma2.cwiseSqrt();
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd z(d);
    for (int i = 0; i < n; ++i) {
        const int k = pick(rng);
        for (int j = 0; j < d; ++j) z[j] = params.thetas[k][j] + sd[j] * normal(rng);
        out.row(i) = G.apply(elem(rng), z).transpose();
    }
    return out;
}

double folded_density(const MixtureParams& params, const FiniteGroup& G, const Eigen::VectorXd& x) {
    const int d = params.d();
    if (x.size() != d) throw Error(ErrorCode::DimensionMismatch, "folded_density: x has wrong length");
    const double log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * params.sigma2.array().log().sum();
    double total = 0.0;
    for (int k = 0; k < params.K(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < G.order(); ++i) {
            // k(g^{-1} x; theta) = N(x; g theta, Sigma) because Sigma is G-invariant.
            const Eigen::VectorXd r = x - G.apply(i, params.thetas[k]);
            acc += std::exp(log_norm - 0.5 * (r.array().square() / params.sigma2.array()).sum());
        }
        total += params.weights[k] * acc / G.order();
    }
    return total;
}

std::vector<double> gaussian_raw_moments_1d(double mu, double var, int kmax) {
    // E[(mu + sZ)^k] = sum_j C(k, 2j) (2j-1)!! var^j mu^{k-2j}.
    std::vector<double> out(kmax + 1, 0.0);
    for (int k = 0; k <= kmax; ++k) {
        double sum = 0.0;
        double binom = 1.0;       // C(k, 2j)
        double dfact = 1.0;       // (2j-1)!!
        double varp = 1.0;
        for (int j = 0; 2 * j <= k; ++j) {
            sum += binom * dfact * varp * std::pow(mu, k - 2 * j);
            binom *= static_cast<double>(k - 2 * j) * (k - 2 * j - 1) / ((2.0 * j + 1) * (2.0 * j + 2));
            dfact *= 2.0 * j + 1;
            varp *= var;
        }
        out[k] = sum;
    }
    return out;
}

SymTensor gaussian_moment_tensor(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma2, int m) {
    if (m < 0 || m > kMaxIsserlisOrder) {
        throw Error(ErrorCode::InvalidArgument, "moment order must be in [0, 8]");
    }
    if (sigma2.size() != mu.size()) throw Error(ErrorCode::DimensionMismatch, "sigma2 length differs from mu");
    const int d = static_cast<int>(mu.size());
    return SymTensor(d, m, moment_coords(moment_tables(mu, sigma2, m), d, m));
}

// ---------------------------------------------------------------------------
// InvariantMap

InvariantMap::InvariantMap(const FiniteGroup& G, std::vector<int> degrees)
    : group_(std::make_shared<const FiniteGroup>(G)) {
    std::set<int> uniq(degrees.begin(), degrees.end());
    if (uniq.empty()) throw Error(ErrorCode::InvalidArgument, "invariant map needs at least one degree");
    if (*uniq.begin() < 1) throw Error(ErrorCode::InvalidArgument, "degrees must be >= 1");
    if (*uniq.rbegin() > kMaxIsserlisOrder) throw Error(ErrorCode::InvalidArgument, "degrees above 8 are not supported");
    degrees_.assign(uniq.begin(), uniq.end());
    offsets_.push_back(0);
    for (int m : degrees_) {
        bases_.push_back(invariant_basis(G, m));
        offsets_.push_back(offsets_.back() + bases_.back()->dim());
    }
}

InvariantMap InvariantMap::up_to(const FiniteGroup& G, int m_star) {
    if (m_star < 1) throw Error(ErrorCode::InvalidArgument, "m_star must be >= 1");
    std::vector<int> deg;
    for (int m = 1; m <= m_star; ++m) deg.push_back(m);
    return InvariantMap(G, deg);
}

Eigen::VectorXd InvariantMap::phi(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const {
    if (theta.size() != d() || sigma2.size() != d()) throw Error(ErrorCode::DimensionMismatch, "phi: wrong lengths");
    const auto mom = moment_tables(theta, sigma2, degrees_.back());
    Eigen::VectorXd out(dim());
    for (std::size_t b = 0; b < degrees_.size(); ++b) {
        if (block_dim(b) == 0) continue;
        out.segment(offsets_[b], block_dim(b)) = bases_[b]->dual * moment_coords(mom, d(), degrees_[b]);
    }
    return out;
}

Eigen::MatrixXd InvariantMap::jacobian(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const {
    Eigen::MatrixXd J(dim(), d());
    for (int i = 0; i < d(); ++i) {
        const double h = 1e-5 * (1.0 + std::abs(theta[i]));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        J.col(i) = (phi(tp, sigma2) - phi(tm, sigma2)) / (tp[i] - tm[i]);
    }
    return J;
}

Eigen::MatrixXd InvariantMap::jacobian_analytic(const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2) const {
    const auto mom = moment_tables(theta, sigma2, degrees_.back());
    Eigen::MatrixXd J(dim(), d());
    for (int i = 0; i < d(); ++i) {
        for (std::size_t b = 0; b < degrees_.size(); ++b) {
            if (block_dim(b) == 0) continue;
            J.col(i).segment(offsets_[b], block_dim(b)) =
                bases_[b]->dual * moment_coords_derivative(mom, d(), degrees_[b], i);
        }
    }
    return J;
}

Eigen::VectorXd InvariantMap::features(const Eigen::VectorXd& x) const {
    if (x.size() != d()) throw Error(ErrorCode::DimensionMismatch, "features: wrong vector length");
    Eigen::VectorXd out(dim());
    for (std::size_t b = 0; b < degrees_.size(); ++b) {
        if (block_dim(b) == 0) continue;
        out.segment(offsets_[b], block_dim(b)) = bases_[b]->dual * monomials(x, degrees_[b]);
    }
    return out;
}

Eigen::MatrixXd InvariantMap::feature_matrix(const Eigen::MatrixXd& data) const {
    if (data.cols() != d()) throw Error(ErrorCode::DimensionMismatch, "data has wrong number of columns");
    Eigen::MatrixXd out(data.rows(), dim());
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < data.rows(); ++i) out.row(i) = features(data.row(i).transpose()).transpose();
    return out;
}

Eigen::VectorXd InvariantMap::mixture_stack(const MixtureParams& params) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    for (int k = 0; k < params.K(); ++k) out += params.weights[k] * phi(params.thetas[k], params.sigma2);
    return out;
}

Eigen::MatrixXd InvariantMap::atom_matrix(const std::vector<Eigen::VectorXd>& thetas, const Eigen::VectorXd& sigma2) const {
    Eigen::MatrixXd M(dim(), thetas.size());
    for (std::size_t k = 0; k < thetas.size(); ++k) M.col(k) = phi(thetas[k], sigma2);
    return M;
}

InvariantStack InvariantMap::wrap(Eigen::VectorXd values) const {
    if (values.size() != dim()) throw Error(ErrorCode::DimensionMismatch, "stack length differs from D_inv");
    return InvariantStack{degrees_, offsets_, std::move(values)};
}

InvariantStack phi_theta(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2, int m_star) {
    if (!covariance_is_invariant(G, sigma2)) {
        throw Error(ErrorCode::InvalidArgument, "diagonal covariance is not invariant under the group");
    }
    const auto map = InvariantMap::up_to(G, m_star);
    return map.wrap(map.phi(theta, sigma2));
}

Eigen::MatrixXd phi_jacobian(const FiniteGroup& G, const Eigen::VectorXd& theta, const Eigen::VectorXd& sigma2,
                             int m_star) {
    return InvariantMap::up_to(G, m_star).jacobian(theta, sigma2);
}

}  // namespace orbitmix
