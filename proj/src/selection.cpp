#include "orbitmix/selection.hpp"

#include "orbitmix/error.hpp"
#include "orbitmix/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace orbitmix {

namespace {

constexpr int kWarmStarts = 5;
constexpr std::size_t kMaxProbes = 100000;

// Throws DegenerateSimplex unless the differences v_j - v_0 have full column rank.
void require_affinely_independent(const std::vector<Eigen::VectorXd>& vertices) {
    const std::size_t K = vertices.size();
    if (K < 2) return;
    const Eigen::Index D = vertices[0].size();
    Eigen::MatrixXd diffs(D, K - 1);
    for (std::size_t j = 1; j < K; ++j) {
        if (vertices[j].size() != D) throw Error(ErrorCode::DimensionMismatch, "vertices differ in length");
        diffs.col(j - 1) = vertices[j] - vertices[0];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(diffs);
    const auto& sv = svd.singularValues();
    if (static_cast<std::size_t>(D) < K - 1 || sv.size() < static_cast<Eigen::Index>(K - 1) ||
        sv[sv.size() - 1] <= 1e-9 * std::max(sv[0], 1.0)) {
        throw Error(ErrorCode::DegenerateSimplex, "vertices are affinely dependent");
    }
}

// argmin_z max_i (A z + b)_i, by Newton on the log-sum-exp smoothing with a shrinking temperature.
// The objective must be bounded below; the answer is within about mu_final * log(rows) of optimal.
Eigen::VectorXd minimize_max_affine(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const Eigen::Index r = A.cols();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(r);
    const double spread = std::max(b.maxCoeff() - b.minCoeff(), 1e-12);
    auto smooth = [&](const Eigen::VectorXd& x, double mu) {
        const Eigen::VectorXd u = (A * x + b) / mu;
        const double top = u.maxCoeff();
        return mu * (top + std::log((u.array() - top).exp().sum()));
    };
    for (double mu = spread; mu > 1e-10 * spread; mu *= 0.3) {
        for (int it = 0; it < 50; ++it) {
            const Eigen::VectorXd u = (A * z + b) / mu;
            Eigen::ArrayXd p = (u.array() - u.maxCoeff()).exp();
            p /= p.sum();
            const Eigen::VectorXd g = A.transpose() * p.matrix();
            const Eigen::MatrixXd Ac = A.rowwise() - g.transpose();
            Eigen::MatrixXd H = Ac.transpose() * p.matrix().asDiagonal() * Ac / mu;
            H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().maxCoeff());
            const Eigen::VectorXd step = -H.ldlt().solve(g);
            const double f0 = smooth(z, mu), slope = g.dot(step);
            if (!(slope < -1e-16 * std::max(1.0, std::abs(f0)))) break;
            double t = 1.0;
            while (t > 1e-10 && smooth(z + t * step, mu) > f0 + 1e-4 * t * slope) t *= 0.5;
            if (t <= 1e-10) break;
            z += t * step;
        }
    }
    return z;
}

// Distance from p to the affine hull of pts (nonempty).
double affine_distance(const Eigen::VectorXd& p, const std::vector<Eigen::VectorXd>& pts) {
    const Eigen::VectorXd& base = pts[0];
    if (pts.size() == 1) return (p - base).norm();
    Eigen::MatrixXd A(base.size(), pts.size() - 1);
    for (std::size_t j = 1; j < pts.size(); ++j) A.col(j - 1) = pts[j] - base;
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(p - base);
    return (p - base - A * coef).norm();
}

}  // namespace

ResidualCurve residual_curve(const InvariantMap& map, const Eigen::VectorXd& psi_hat, int K_max,
                             const Eigen::VectorXd& sigma2, const FitConfig& config) {
    if (K_max < 1) throw Error(ErrorCode::InvalidArgument, "K_max must be >= 1");
    const int d = map.d();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(map.dim(), map.dim());
    const Eigen::VectorXd lo = config.box_lo.size() == d ? config.box_lo : Eigen::VectorXd::Constant(d, -5.0);
    const Eigen::VectorXd hi = config.box_hi.size() == d ? config.box_hi : Eigen::VectorXd::Constant(d, 5.0);

    ResidualCurve curve;
    std::optional<MixtureParams> prev;
    double prev_r = std::numeric_limits<double>::infinity();
    for (int K = 1; K <= K_max; ++K) {
        FitConfig cfg = config;
        cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(K));
        cfg.init.clear();
        for (const auto& s : config.init) {
            if (static_cast<int>(s.size()) == K) cfg.init.push_back(s);
        }
        if (prev) {
            std::mt19937_64 rng(derive_seed(cfg.seed, 0xA11CEULL));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (int j = 0; j < kWarmStarts; ++j) {
                std::vector<Eigen::VectorXd> s = prev->thetas;
                Eigen::VectorXd t(d);
                for (int i = 0; i < d; ++i) t[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
                s.push_back(t);
                cfg.init.push_back(std::move(s));
            }
        }
        MixtureParams best;
        double r = std::numeric_limits<double>::infinity();
        std::string err;
        try {
            const FitReport rep = fit(map, psi_hat, I, K, sigma2, cfg);
            best = rep.params;
            r = (psi_hat - map.mixture_stack(best)).norm();
        } catch (const std::exception& e) {
            err = e.what();
        }
        if (prev && !(r <= prev_r)) {
            best = *prev;
            best.thetas.push_back(prev->thetas.back());
            best.weights.conservativeResize(K);
            best.weights[K - 1] = 0.0;
            r = prev_r;
        }
        curve.Ks.push_back(K);
        curve.residuals.push_back(r);
        curve.fits.push_back(best);
        curve.errors.push_back(err);
        if (std::isfinite(r)) {
            prev = best;
            prev_r = r;
        }
    }
    return curve;
}

double selection_threshold(long long n, int D, double tau, double t) {
    if (!(tau > 0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "n must be >= 1");
    const double x = (D + t) / static_cast<double>(n);
    return tau * (std::sqrt(x) + x);
}

int select_k(ResidualCurve& curve, long long n, int D, double tau, double t) {
    if (t < 0) t = std::log(static_cast<double>(n));
    curve.eta = selection_threshold(n, D, tau, t);
    curve.K_hat = curve.Ks.empty() ? 1 : curve.Ks.back() + 1;
    for (std::size_t i = 0; i < curve.Ks.size(); ++i) {
        if (curve.residuals[i] <= curve.eta) {
            curve.K_hat = curve.Ks[i];
            break;
        }
    }
    return curve.K_hat;
}

SimplexMargin simplex_margin(const std::vector<Eigen::VectorXd>& vertices, const Eigen::VectorXd& weights) {
    const std::size_t K = vertices.size();
    if (K < 1) throw Error(ErrorCode::InvalidArgument, "simplex needs at least one vertex");
    if (weights.size() != static_cast<Eigen::Index>(K)) throw Error(ErrorCode::DimensionMismatch, "one weight per vertex");
    SimplexMargin out;
    if (K == 1) {
        out.gamma = std::numeric_limits<double>::infinity();
        return out;
    }
    require_affinely_independent(vertices);
    out.heights.resize(K);
    out.distances.resize(K);
    for (std::size_t j = 0; j < K; ++j) {
        std::vector<Eigen::VectorXd> others;
        for (std::size_t i = 0; i < K; ++i) {
            if (i != j) others.push_back(vertices[i]);
        }
        out.heights[j] = affine_distance(vertices[j], others);
        out.distances[j] = weights[j] * out.heights[j];
    }
    out.gamma = out.distances.minCoeff();
    return out;
}

AtomSet caratheodory_reduce(const std::vector<Eigen::VectorXd>& atoms, const Eigen::VectorXd& weights) {
    if (atoms.size() != static_cast<std::size_t>(weights.size())) {
        throw Error(ErrorCode::DimensionMismatch, "one weight per atom");
    }
    if (atoms.empty()) throw Error(ErrorCode::InvalidArgument, "no atoms");
    const Eigen::Index D = atoms[0].size();
    AtomSet cur;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (weights[i] <= 0) continue;
        bool merged = false;
        for (std::size_t j = 0; j < cur.atoms.size(); ++j) {
            if ((cur.atoms[j] - atoms[i]).norm() <= 1e-12 * (1.0 + atoms[i].norm())) {
                cur.weights[j] += weights[i];
                merged = true;
                break;
            }
        }
        if (!merged) {
            cur.atoms.push_back(atoms[i]);
            cur.weights.conservativeResize(cur.atoms.size());
            cur.weights[cur.atoms.size() - 1] = weights[i];
        }
    }
    while (static_cast<Eigen::Index>(cur.atoms.size()) > D + 1) {
        const Eigen::Index K = static_cast<Eigen::Index>(cur.atoms.size());
        Eigen::MatrixXd A(D + 1, K);
        for (Eigen::Index j = 0; j < K; ++j) {
            A.col(j).head(D) = cur.atoms[j];
            A(D, j) = 1.0;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
        Eigen::VectorXd beta = svd.matrixV().col(K - 1);
        Eigen::Index imax;
        beta.cwiseAbs().maxCoeff(&imax);
        if (beta[imax] < 0) beta = -beta;
        double tstar = std::numeric_limits<double>::infinity();
        Eigen::Index jstar = -1;
        for (Eigen::Index j = 0; j < K; ++j) {
            if (beta[j] > 0 && cur.weights[j] / beta[j] < tstar) {
                tstar = cur.weights[j] / beta[j];
                jstar = j;
            }
        }
        cur.weights -= tstar * beta;
        cur.weights[jstar] = 0.0;
        AtomSet next;
        for (Eigen::Index j = 0; j < K; ++j) {
            if (cur.weights[j] > 0) {
                next.atoms.push_back(cur.atoms[j]);
                next.weights.conservativeResize(next.atoms.size());
                next.weights[next.atoms.size() - 1] = cur.weights[j];
            }
        }
        cur = std::move(next);
    }
    return cur;
}

std::optional<DualCertificate> dual_certificate(const std::vector<Eigen::VectorXd>& vertices,
                                                const std::vector<Eigen::VectorXd>& probes) {
    if (vertices.empty()) throw Error(ErrorCode::InvalidArgument, "dual certificate needs a vertex");
    require_affinely_independent(vertices);
    const Eigen::Index D = vertices[0].size();
    Eigen::VectorXd o = Eigen::VectorXd::Zero(D);
    if (!probes.empty()) {
        for (const auto& p : probes) o += p;
        o /= static_cast<double>(probes.size());
    }
    const Eigen::Index K = static_cast<Eigen::Index>(vertices.size());
    Eigen::MatrixXd A(K, D);
    for (Eigen::Index k = 0; k < K; ++k) A.row(k) = (vertices[k] - o).transpose();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(K);
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    const Eigen::VectorXd lambda0 = cod.solve(ones);
    if ((A * lambda0 - ones).norm() > 1e-9 * std::sqrt(static_cast<double>(K)) || lambda0.norm() == 0.0) {
        throw Error(ErrorCode::DegenerateSimplex, "no affine functional equals 1 on every vertex");
    }

    // probes off the face, centred
    std::vector<Eigen::VectorXd> off;
    for (const auto& p : probes) {
        bool on_vertex = false;
        for (const auto& v : vertices) {
            if ((p - v).norm() <= 1e-9 * (1.0 + v.norm())) on_vertex = true;
        }
        if (!on_vertex) off.push_back(p - o);
    }
    auto eta_of = [&](const Eigen::VectorXd& lambda) {
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& q : off) top = std::max(top, lambda.dot(q));
        return 1.0 - top;
    };

    Eigen::VectorXd lambda = lambda0;
    double eta = eta_of(lambda);
    if (!(eta > 0) && !off.empty()) {
        // The minimum-norm functional is only one member of {lambda : A lambda = 1}. Search the rest,
        // lambda = lambda0 + N z, for the largest eta, i.e. the smallest max_q <lambda, q>.
        // Coordinates are rescaled to unit range first: the feature blocks differ by orders of magnitude.
        Eigen::VectorXd scale = A.cwiseAbs().colwise().maxCoeff().transpose();
        for (const auto& q : off) scale = scale.cwiseMax(q.cwiseAbs());
        scale = (scale.array() > 0).select(scale, 1.0);
        const Eigen::MatrixXd As = A * scale.cwiseInverse().asDiagonal();
        const Eigen::VectorXd mu0 = As.completeOrthogonalDecomposition().solve(ones);
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(As);
        const Eigen::Index r = lu.rank() < D ? lu.kernel().cols() : 0;
        if (r > 0) {
            const Eigen::MatrixXd N = lu.kernel().colwise().normalized();
            const Eigen::Index n = static_cast<Eigen::Index>(off.size());
            Eigen::MatrixXd Aq(n, r);
            Eigen::VectorXd bq(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::VectorXd qs = off[i].cwiseQuotient(scale);
                Aq.row(i) = (N.transpose() * qs).transpose();
                bq[i] = mu0.dot(qs);
            }
            const Eigen::VectorXd z = minimize_max_affine(Aq, bq);
            const Eigen::VectorXd candidate = (mu0 + N * z).cwiseQuotient(scale);
            const double e = eta_of(candidate);
            if ((A * candidate - ones).norm() <= 1e-8 * std::sqrt(static_cast<double>(K)) && e > eta) {
                lambda = candidate;
                eta = e;
            }
        }
    }
    if (off.empty()) eta = 1.0;
    if (!(eta > 0)) return std::nullopt;
    DualCertificate cert;
    const double norm = lambda.norm();
    cert.lambda = lambda / norm;
    cert.offset = (1.0 + lambda.dot(o)) / norm;
    cert.eta = eta;
    return cert;
}

std::vector<Eigen::VectorXd> probe_grid(const InvariantMap& map, const Eigen::VectorXd& sigma2,
                                        const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int per_axis) {
    const int d = map.d();
    if (lo.size() != d || hi.size() != d) throw Error(ErrorCode::DimensionMismatch, "probe box has wrong dimension");
    if (per_axis < 1) throw Error(ErrorCode::InvalidArgument, "per_axis must be >= 1");
    std::size_t total = 1;
    for (int i = 0; i < d && total <= kMaxProbes; ++i) total *= static_cast<std::size_t>(per_axis);
    total = std::min(total, kMaxProbes);
    std::vector<Eigen::VectorXd> out(total);
#pragma omp parallel for schedule(static)
    for (std::size_t idx = 0; idx < total; ++idx) {
        Eigen::VectorXd t(d);
        std::size_t rem = idx;
        for (int i = 0; i < d; ++i) {
            const int k = static_cast<int>(rem % per_axis);
            rem /= per_axis;
            t[i] = per_axis == 1 ? 0.5 * (lo[i] + hi[i]) : lo[i] + (hi[i] - lo[i]) * k / (per_axis - 1);
        }
        out[idx] = map.phi(t, sigma2);
    }
    return out;
}

}  // namespace orbitmix
