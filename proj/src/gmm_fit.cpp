#include "orbitmix/gmm_fit.hpp"

#include "orbitmix/chi_square.hpp"
#include "orbitmix/error.hpp"
#include "orbitmix/orbit_metric.hpp"
#include "orbitmix/rng.hpp"
#include "orbitmix/stack_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace orbitmix {

namespace {

constexpr double kCollinearTol = 1e-12;

struct QPSolve {
    Eigen::VectorXd w;
    bool collinear = false;
};

// Equality-constrained minimizer of 1/2 w'Gw - c'w with sum(w) = 1, over the free set.
QPSolve solve_free(const Eigen::MatrixXd& Gm, const Eigen::VectorXd& c, const std::vector<int>& free, bool strict) {
    const int f = static_cast<int>(free.size());
    const int K = static_cast<int>(Gm.rows());
    Eigen::MatrixXd Gf(f, f);
    Eigen::VectorXd cf(f);
    for (int i = 0; i < f; ++i) {
        cf[i] = c[free[i]];
        for (int j = 0; j < f; ++j) Gf(i, j) = Gm(free[i], free[j]);
    }
    QPSolve out;
    out.w = Eigen::VectorXd::Zero(K);
    if (f == 1) {
        out.w[free[0]] = 1.0;
        return out;
    }
    // Curvature on the tangent space {sum = 0}: singular iff two free atoms coincide affinely.
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(f, f - 1);
    for (int j = 0; j < f - 1; ++j) {
        Z(j, j) = 1.0;
        Z(f - 1, j) = -1.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Z.transpose() * Gf * Z, Eigen::EigenvaluesOnly);
    const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    double ridge = 1e-14 * Gf.trace() / f;
    if (es.eigenvalues().minCoeff() <= kCollinearTol * top) {
        if (strict) {
            throw Error(ErrorCode::Collinear, "atoms are collinear on the invariants; the weight Gram matrix is singular");
        }
        out.collinear = true;
        ridge = 1e-10 * Gf.trace() / f;
    }
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(f + 1, f + 1);
    kkt.topLeftCorner(f, f) = Gf + ridge * Eigen::MatrixXd::Identity(f, f);
    kkt.block(0, f, f, 1).setOnes();
    kkt.block(f, 0, 1, f).setOnes();
    Eigen::VectorXd rhs(f + 1);
    rhs << cf, 1.0;
    Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    for (int i = 0; i < f; ++i) out.w[free[i]] = sol[i];
    return out;
}

// KKT check for the simplex QP: gradient g = Gw - c must be constant on the support and not smaller off it.
bool kkt_ok(const Eigen::MatrixXd& Gm, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
    const Eigen::VectorXd g = Gm * w - c;
    const double scale = 1e-9 * (1.0 + g.cwiseAbs().maxCoeff());
    double nu = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (w[i] < -1e-12) return false;
        if (w[i] > 0) nu = std::min(nu, g[i]);
    }
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (g[i] < nu - scale) return false;
        if (w[i] > 0 && g[i] > nu + scale) return false;
    }
    return true;
}

double qp_value(const Eigen::MatrixXd& Gm, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
    return 0.5 * w.dot(Gm * w) - c.dot(w);
}

QPSolve simplex_qp(const Eigen::MatrixXd& Gm, const Eigen::VectorXd& c, bool strict) {
    const int K = static_cast<int>(Gm.rows());
    std::vector<int> free(K);
    std::iota(free.begin(), free.end(), 0);
    std::vector<char> clamped(K, 0);
    QPSolve cur;
    bool any_collinear = false;
    for (int iter = 0; iter < 3 * K; ++iter) {
        cur = solve_free(Gm, c, free, strict);
        any_collinear = any_collinear || cur.collinear;
        int worst = -1;
        for (int i : free) {
            if (cur.w[i] < 0 && (worst < 0 || cur.w[i] < cur.w[worst])) worst = i;
        }
        if (worst >= 0) {
            clamped[worst] = 1;
            free.erase(std::find(free.begin(), free.end(), worst));
            continue;
        }
        // Reinstate the clamped coordinate with the most negative reduced gradient, if any.
        const Eigen::VectorXd g = Gm * cur.w - c;
        const double nu = g[free[0]];
        int enter = -1;
        double most = -1e-12 * (1.0 + g.cwiseAbs().maxCoeff());
        for (int j = 0; j < K; ++j) {
            if (clamped[j] && g[j] - nu < most) {
                most = g[j] - nu;
                enter = j;
            }
        }
        if (enter < 0) break;
        clamped[enter] = 0;
        free.push_back(enter);
        std::sort(free.begin(), free.end());
    }
    cur.w = cur.w.cwiseMax(0.0);
    cur.w /= cur.w.sum();
    cur.collinear = any_collinear;
    if (kkt_ok(Gm, c, cur.w) || K > 16) return cur;

    // The clamping loop cycled; enumerate supports, which is exact for the small K used here.
    QPSolve best = cur;
    double best_val = qp_value(Gm, c, cur.w);
    for (unsigned mask = 1; mask < (1u << K); ++mask) {
        std::vector<int> support;
        for (int i = 0; i < K; ++i) {
            if (mask & (1u << i)) support.push_back(i);
        }
        QPSolve trial = solve_free(Gm, c, support, false);
        if (trial.w.minCoeff() < -1e-14) continue;
        trial.w = trial.w.cwiseMax(0.0);
        const double v = qp_value(Gm, c, trial.w);
        if (v < best_val) {
            best_val = v;
            best = trial;
        }
    }
    return best;
}

Eigen::VectorXd weight_step_impl(const Eigen::MatrixXd& M, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W,
                                 bool strict) {
    if (M.rows() != psi_hat.size() || W.rows() != psi_hat.size() || W.cols() != psi_hat.size()) {
        throw Error(ErrorCode::DimensionMismatch, "weight_step: inconsistent shapes");
    }
    if (M.cols() < 1) throw Error(ErrorCode::InvalidArgument, "weight_step needs K >= 1");
    const Eigen::MatrixXd WM = W * M;
    Eigen::MatrixXd Gm = M.transpose() * WM;
    Gm = 0.5 * (Gm + Gm.transpose()).eval();
    return simplex_qp(Gm, WM.transpose() * psi_hat, strict).w;
}

std::vector<Eigen::VectorXd> unflatten(const Eigen::VectorXd& x, int K, int d) {
    std::vector<Eigen::VectorXd> out;
    for (int k = 0; k < K; ++k) out.push_back(x.segment(k * d, d));
    return out;
}

Eigen::VectorXd flatten(const std::vector<Eigen::VectorXd>& thetas) {
    const int d = static_cast<int>(thetas[0].size());
    Eigen::VectorXd out(d * thetas.size());
    for (std::size_t k = 0; k < thetas.size(); ++k) out.segment(k * d, d) = thetas[k];
    return out;
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

// Canonical representatives, blocks sorted lexicographically; weights follow their blocks.
void align(const FiniteGroup& G, std::vector<Eigen::VectorXd>& thetas, Eigen::VectorXd& weights) {
    for (auto& t : thetas) t = G.canonical_rep(t);
    std::vector<int> order(thetas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lex_less(thetas[a], thetas[b]); });
    std::vector<Eigen::VectorXd> t2;
    Eigen::VectorXd w2(weights.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        t2.push_back(thetas[order[i]]);
        if (weights.size()) w2[i] = weights[order[i]];
    }
    thetas = std::move(t2);
    if (weights.size()) weights = w2;
}

struct SingleRun {
    std::vector<Eigen::VectorXd> thetas;
    Eigen::VectorXd weights;
    double objective = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<std::vector<int>> active_sets;
    std::string message;
};

std::vector<int> support_of(const Eigen::VectorXd& w) {
    std::vector<int> s;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (w[i] > 0) s.push_back(static_cast<int>(i));
    }
    return s;
}

SingleRun run_once(const InvariantMap& map, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W,
                   const Eigen::VectorXd& sigma2, std::vector<Eigen::VectorXd> thetas, const FitConfig& cfg) {
    const int K = static_cast<int>(thetas.size());
    const int d = map.d();
    SingleRun run;
    Eigen::VectorXd dummy;
    align(map.group(), thetas, dummy);
    ProfiledValue pv = profiled_objective(map, thetas, sigma2, psi_hat, W);
    if (!std::isfinite(pv.objective)) {
        run.message = "non-finite objective at the starting point";
        return run;
    }
    double nu = -1.0;
    double eta = cfg.step_size;
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        const double gnorm = pv.gradient.norm();
        if (cfg.record_trajectory) {
            run.trajectory.push_back({pv.objective, gnorm, std::sqrt(2.0 * pv.objective)});
            run.active_sets.push_back(support_of(pv.weights));
        }
        if (gnorm <= cfg.grad_tol || pv.objective == 0.0) {
            run.converged = true;
            run.message = "gradient tolerance reached";
            break;
        }
        const Eigen::VectorXd x = flatten(thetas);
        bool accepted = false;
        ProfiledValue next;
        Eigen::VectorXd xnext;
        if (cfg.theta_step == ThetaStep::GaussNewton) {
            Eigen::MatrixXd Jbar(map.dim(), K * d);
            for (int k = 0; k < K; ++k) Jbar.middleCols(k * d, d) = pv.weights[k] * map.jacobian(thetas[k], sigma2);
            // Weights move on the affine hull of the active atoms, so P projects out the span of
            // their differences; W P = W - W A (A'WA)^{-1} A'W is symmetric.
            const auto supp = support_of(pv.weights);
            Eigen::MatrixXd WP = W;
            if (supp.size() > 1) {
                const Eigen::VectorXd last = map.phi(thetas[supp.back()], sigma2);
                Eigen::MatrixXd A(map.dim(), supp.size() - 1);
                for (std::size_t j = 0; j + 1 < supp.size(); ++j) A.col(j) = map.phi(thetas[supp[j]], sigma2) - last;
                const Eigen::MatrixXd WA = W * A;
                Eigen::MatrixXd gram = A.transpose() * WA;
                gram.diagonal().array() += 1e-12 * gram.trace() / static_cast<double>(A.cols());
                WP -= WA * gram.ldlt().solve(WA.transpose());
            }
            Eigen::MatrixXd H = Jbar.transpose() * WP * Jbar;
            H = 0.5 * (H + H.transpose()).eval();
            const Eigen::VectorXd g = Jbar.transpose() * WP * pv.residual;
            const double hscale = std::max(H.diagonal().cwiseAbs().mean(), std::numeric_limits<double>::min());
            if (nu < 0) nu = cfg.initial_damping * hscale;
            for (int inner = 0; inner < 40; ++inner) {
                Eigen::MatrixXd A = H;
                A.diagonal().array() += nu;
                const Eigen::VectorXd step = A.ldlt().solve(g);
                xnext = x + step;
                next = profiled_objective(map, unflatten(xnext, K, d), sigma2, psi_hat, W);
                if (std::isfinite(next.objective) && next.objective < pv.objective) {
                    const double pred = g.dot(step) - 0.5 * step.dot(H * step);
                    const double rho = pred > 0 ? (pv.objective - next.objective) / pred : 0.0;
                    if (rho > 0.75) nu = std::max(nu / 3.0, 1e-15 * hscale);
                    if (rho < 0.25) nu *= 2.0;
                    accepted = true;
                    break;
                }
                nu *= 4.0;
                if (nu > 1e16 * hscale) break;
            }
        } else {
            const Eigen::VectorXd& grad = pv.gradient;
            const double g2 = grad.squaredNorm();
            double trial = cfg.step_rule == StepRule::Armijo ? std::min(cfg.step_size, 2.0 * eta) : cfg.step_size;
            for (int inner = 0; inner < 60; ++inner) {
                xnext = x - trial * grad;
                next = profiled_objective(map, unflatten(xnext, K, d), sigma2, psi_hat, W);
                const bool ok = cfg.step_rule == StepRule::Armijo
                                    ? next.objective <= pv.objective - cfg.armijo_c * trial * g2
                                    : next.objective <= pv.objective;
                if (std::isfinite(next.objective) && ok) {
                    accepted = true;
                    eta = trial;
                    break;
                }
                trial *= cfg.step_rule == StepRule::Armijo ? cfg.armijo_beta : 0.5;
            }
        }
        if (!accepted) {
            // No decrease is representable: numerically stationary.
            run.converged = true;
            run.message = "no further decrease at working precision";
            break;
        }
        const double rel_change = (pv.objective - next.objective) / std::max(pv.objective, 1e-300);
        const double rel_step = (xnext - x).norm() / (1.0 + x.norm());
        thetas = unflatten(xnext, K, d);
        pv = std::move(next);
        if (cfg.align_every > 0 && (it + 1) % cfg.align_every == 0) {
            Eigen::VectorXd w = pv.weights;
            align(map.group(), thetas, w);
            pv = profiled_objective(map, thetas, sigma2, psi_hat, W);
        }
        if (rel_change < 1e-15 && rel_step < 1e-12) {
            run.converged = true;
            run.message = "stationary: relative change below working precision";
            ++it;
            if (cfg.record_trajectory) {
                run.trajectory.push_back({pv.objective, pv.gradient.norm(), std::sqrt(2.0 * pv.objective)});
                run.active_sets.push_back(support_of(pv.weights));
            }
            break;
        }
    }
    if (it >= cfg.max_iter) run.message = "iteration limit reached";
    run.iterations = it;
    Eigen::VectorXd w = pv.weights;
    align(map.group(), thetas, w);
    run.thetas = thetas;
    run.weights = w;
    run.objective = pv.objective;
    return run;
}

}  // namespace

Eigen::VectorXd weight_step(const Eigen::MatrixXd& M, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W) {
    return weight_step_impl(M, psi_hat, W, true);
}

ProfiledValue profiled_objective(const InvariantMap& map, const std::vector<Eigen::VectorXd>& thetas,
                                 const Eigen::VectorXd& sigma2, const Eigen::VectorXd& psi_hat,
                                 const Eigen::MatrixXd& W, bool with_gradient) {
    ProfiledValue out;
    const Eigen::MatrixXd M = map.atom_matrix(thetas, sigma2);
    if (!M.allFinite()) {
        out.objective = std::numeric_limits<double>::infinity();
        out.weights = Eigen::VectorXd::Constant(thetas.size(), 1.0 / thetas.size());
        out.residual = Eigen::VectorXd::Zero(psi_hat.size());
        out.gradient = Eigen::VectorXd::Zero(thetas.size() * map.d());
        return out;
    }
    out.weights = weight_step_impl(M, psi_hat, W, false);
    out.residual = psi_hat - M * out.weights;
    const Eigen::VectorXd Wr = W * out.residual;
    out.objective = 0.5 * out.residual.dot(Wr);
    if (with_gradient) {
        const int d = map.d();
        out.gradient.resize(thetas.size() * d);
        for (std::size_t k = 0; k < thetas.size(); ++k) {
            if (out.weights[k] == 0.0) {
                out.gradient.segment(k * d, d).setZero();
            } else {
                out.gradient.segment(k * d, d) = -out.weights[k] * map.jacobian(thetas[k], sigma2).transpose() * Wr;
            }
        }
    }
    return out;
}

void set_box_from_data(FitConfig& config, const Eigen::MatrixXd& data) {
    const Eigen::Index d = data.cols();
    config.box_lo.resize(d);
    config.box_hi.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        std::vector<double> a(data.rows());
        for (Eigen::Index i = 0; i < data.rows(); ++i) a[i] = std::abs(data(i, j));
        const std::size_t q = static_cast<std::size_t>(0.95 * (a.size() - 1));
        std::nth_element(a.begin(), a.begin() + q, a.end());
        const double hi = a[q] > 0 ? a[q] : 1.0;
        config.box_lo[j] = -hi;
        config.box_hi[j] = hi;
    }
}

FitReport fit(const InvariantMap& map, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W, int K,
              const Eigen::VectorXd& sigma2, const FitConfig& config) {
    const int d = map.d();
    if (map.dim() < 1) throw Error(ErrorCode::InvalidArgument, "invariant stack is empty");
    if (psi_hat.size() != map.dim()) throw Error(ErrorCode::DimensionMismatch, "psi_hat length differs from D_inv");
    if (K < 1) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
    if (config.max_iter < 1 || config.grad_tol <= 0) throw Error(ErrorCode::InvalidArgument, "bad fit configuration");

    std::vector<std::vector<Eigen::VectorXd>> starts;
    for (const auto& s : config.init) {
        if (static_cast<int>(s.size()) != K) throw Error(ErrorCode::DimensionMismatch, "initial point has wrong K");
        starts.push_back(s);
    }
    Eigen::VectorXd lo = config.box_lo.size() == d ? config.box_lo : Eigen::VectorXd::Constant(d, -5.0);
    Eigen::VectorXd hi = config.box_hi.size() == d ? config.box_hi : Eigen::VectorXd::Constant(d, 5.0);
    for (int r = 0; r < config.restarts; ++r) {
        std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Eigen::VectorXd> s;
        for (int k = 0; k < K; ++k) {
            Eigen::VectorXd t(d);
            for (int j = 0; j < d; ++j) t[j] = lo[j] + (hi[j] - lo[j]) * u(rng);
            s.push_back(t);
        }
        starts.push_back(std::move(s));
    }
    if (starts.empty()) throw Error(ErrorCode::InvalidArgument, "no starting points: give init or restarts >= 1");

    std::vector<SingleRun> runs(starts.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < starts.size(); ++i) {
        try {
            runs[i] = run_once(map, psi_hat, W, sigma2, starts[i], config);
        } catch (const Error& e) {
            runs[i].message = e.what();
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const auto& a = runs[i];
        const auto& b = runs[best];
        if (a.objective < b.objective ||
            (a.objective == b.objective && std::isfinite(a.objective) && lex_less(flatten(a.thetas), flatten(b.thetas)))) {
            best = i;
        }
    }
    const SingleRun& r = runs[best];
    if (!std::isfinite(r.objective)) throw Error(ErrorCode::InvalidArgument, "every restart diverged: " + r.message);
    FitReport rep;
    rep.params.thetas = r.thetas;
    rep.params.weights = r.weights;
    rep.params.sigma2 = sigma2;
    rep.converged = r.converged;
    rep.iterations = r.iterations;
    rep.objective = r.objective;
    rep.trajectory = r.trajectory;
    rep.active_sets = r.active_sets;
    rep.restarts_run = static_cast<int>(runs.size());
    rep.message = r.message;
    return rep;
}

// ---------------------------------------------------------------------------
// Chart, one-step, curvature correction

Eigen::VectorXd to_chart(const MixtureParams& p) {
    const int K = p.K(), d = p.d();
    Eigen::VectorXd xi(K * d + K - 1);
    for (int k = 0; k < K; ++k) xi.segment(k * d, d) = p.thetas[k];
    for (int k = 0; k < K - 1; ++k) xi[K * d + k] = p.weights[k];
    return xi;
}

MixtureParams from_chart(const Eigen::VectorXd& xi, int K, int d, const Eigen::VectorXd& sigma2) {
    if (xi.size() != K * d + K - 1) throw Error(ErrorCode::DimensionMismatch, "chart vector has wrong length");
    MixtureParams p;
    p.thetas = unflatten(xi.head(K * d), K, d);
    p.weights.resize(K);
    for (int k = 0; k < K - 1; ++k) p.weights[k] = xi[K * d + k];
    p.weights[K - 1] = 1.0 - xi.tail(K - 1).sum();
    p.sigma2 = sigma2;
    return p;
}

Eigen::VectorXd chart_map(const InvariantMap& map, const Eigen::VectorXd& xi, int K, const Eigen::VectorXd& sigma2) {
    const MixtureParams p = from_chart(xi, K, map.d(), sigma2);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(map.dim());
    for (int k = 0; k < K; ++k) out += p.weights[k] * map.phi(p.thetas[k], sigma2);
    return out;
}

Eigen::MatrixXd chart_jacobian(const InvariantMap& map, const MixtureParams& p) {
    const int K = p.K(), d = p.d();
    Eigen::MatrixXd G(map.dim(), K * d + K - 1);
    const Eigen::VectorXd last = map.phi(p.thetas[K - 1], p.sigma2);
    for (int k = 0; k < K; ++k) {
        G.middleCols(k * d, d) = p.weights[k] * map.jacobian(p.thetas[k], p.sigma2);
        if (k < K - 1) G.col(K * d + k) = map.phi(p.thetas[k], p.sigma2) - last;
    }
    return G;
}

Eigen::VectorXd one_step_chart(const ChartMap& Psi, const Eigen::MatrixXd& G, const Eigen::VectorXd& xi,
                               const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W) {
    Eigen::MatrixXd A = G.transpose() * W * G;
    A = 0.5 * (A + A.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-14 * std::max(es.eigenvalues().maxCoeff(), 0.0)) {
        throw Error(ErrorCode::Collinear, "chart Jacobian is rank deficient; one-step update undefined");
    }
    return xi + A.ldlt().solve(G.transpose() * W * (psi_hat - Psi(xi)));
}

MixtureParams one_step(const InvariantMap& map, const MixtureParams& start, const Eigen::VectorXd& psi_hat,
                       const Eigen::MatrixXd& W) {
    const int K = start.K(), d = start.d();
    const Eigen::VectorXd sigma2 = start.sigma2;
    ChartMap Psi = [&](const Eigen::VectorXd& x) { return chart_map(map, x, K, sigma2); };
    const Eigen::VectorXd xi = one_step_chart(Psi, chart_jacobian(map, start), to_chart(start), psi_hat, W);
    MixtureParams p = from_chart(xi, K, d, sigma2);
    if (p.weights.minCoeff() < 0) {
        p.weights = p.weights.cwiseMax(0.0);
        p.weights /= p.weights.sum();
    }
    return p;
}

std::vector<Eigen::MatrixXd> chart_hessians(const ChartMap& Psi, const Eigen::VectorXd& xi) {
    const Eigen::Index q = xi.size();
    const Eigen::VectorXd f0 = Psi(xi);
    const Eigen::Index D = f0.size();
    std::vector<Eigen::MatrixXd> H(D, Eigen::MatrixXd::Zero(q, q));
    Eigen::VectorXd h(q);
    for (Eigen::Index i = 0; i < q; ++i) h[i] = 1e-4 * (1.0 + std::abs(xi[i]));
    auto shifted = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
        Eigen::VectorXd x = xi;
        x[i] += si * h[i];
        x[j] += sj * h[j];
        return Psi(x);
    };
    for (Eigen::Index i = 0; i < q; ++i) {
        Eigen::VectorXd x = xi;
        x[i] += h[i];
        const Eigen::VectorXd fp = Psi(x);
        x[i] = xi[i] - h[i];
        const Eigen::VectorXd fm = Psi(x);
        const Eigen::VectorXd dii = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for (Eigen::Index r = 0; r < D; ++r) H[r](i, i) = dii[r];
        for (Eigen::Index j = i + 1; j < q; ++j) {
            const Eigen::VectorXd dij =
                (shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) + shifted(i, -1, j, -1)) /
                (4.0 * h[i] * h[j]);
            for (Eigen::Index r = 0; r < D; ++r) H[r](i, j) = H[r](j, i) = dij[r];
        }
    }
    return H;
}

BiasCorrection bias_correct_chart(const ChartMap& Psi, const Eigen::MatrixXd& G, const Eigen::VectorXd& xi,
                                  const Eigen::MatrixXd& Sigma_hat, long long n) {
    BiasCorrection out;
    out.xi = xi;
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "bias correction needs n >= 1");
    const Eigen::MatrixXd Sinv_G = Sigma_hat.ldlt().solve(G);
    Eigen::MatrixXd IQ = G.transpose() * Sinv_G;
    IQ = 0.5 * (IQ + IQ.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(IQ, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
    if (!(lmin > 0) || lmax / lmin > 1e10) {
        out.message = "quotient Fisher matrix ill-conditioned; correction skipped";
        out.b = Eigen::VectorXd::Zero(xi.size());
        return out;
    }
    const Eigen::MatrixXd IQinv = IQ.ldlt().solve(Eigen::MatrixXd::Identity(xi.size(), xi.size()));
    const auto H = chart_hessians(Psi, xi);
    Eigen::VectorXd t(H.size());
    for (std::size_t r = 0; r < H.size(); ++r) t[r] = (H[r] * IQinv).trace();
    // Row r of Sinv_G is G' S^{-1} e_r.
    out.b = 0.5 * Sinv_G.transpose() * t;
    out.xi = xi + IQinv * out.b / static_cast<double>(n);
    out.applied = true;
    return out;
}

MixtureParams bias_correct(const InvariantMap& map, const MixtureParams& fitted, const Eigen::MatrixXd& Sigma_hat,
                           long long n, std::string* message) {
    const int K = fitted.K(), d = fitted.d();
    const Eigen::VectorXd sigma2 = fitted.sigma2;
    ChartMap Psi = [&](const Eigen::VectorXd& x) { return chart_map(map, x, K, sigma2); };
    const auto bc = bias_correct_chart(Psi, chart_jacobian(map, fitted), to_chart(fitted), Sigma_hat, n);
    if (message) *message = bc.message;
    MixtureParams p = from_chart(bc.xi, K, d, sigma2);
    if (p.weights.minCoeff() < 0) {
        p.weights = p.weights.cwiseMax(0.0);
        p.weights /= p.weights.sum();
    }
    return p;
}

// ---------------------------------------------------------------------------
// Diagnostics

QuotientFisher quotient_fisher_from_jacobian(const Eigen::MatrixXd& G, const Eigen::MatrixXd& W) {
    QuotientFisher q;
    q.G = G;
    q.I_Q = G.transpose() * W * G;
    q.I_Q = 0.5 * (q.I_Q + q.I_Q.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.I_Q, Eigen::EigenvaluesOnly);
    q.sigma_min = std::max(es.eigenvalues().minCoeff(), 0.0);
    q.cond = q.sigma_min > 0 ? es.eigenvalues().maxCoeff() / q.sigma_min : std::numeric_limits<double>::infinity();
    if (G.rows() >= G.cols()) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
        q.jac_sigma_min = svd.singularValues()[svd.singularValues().size() - 1];
    } else {
        q.jac_sigma_min = 0.0;
    }
    q.stability_constant = q.jac_sigma_min > 0 ? 2.0 / q.jac_sigma_min : std::numeric_limits<double>::infinity();
    return q;
}

QuotientFisher quotient_fisher_diag(const InvariantMap& map, const MixtureParams& p, const Eigen::MatrixXd& W) {
    return quotient_fisher_from_jacobian(chart_jacobian(map, p), W);
}

JTest j_test_from_residual(const Eigen::VectorXd& residual, const Eigen::MatrixXd& W, long long n, int df) {
    JTest j;
    j.J = static_cast<double>(n) * residual.dot(W * residual);
    j.df = df;
    if (df >= 0) j.p_value = chi2_upper_tail(j.J, df);
    return j;
}

JTest j_test(const InvariantMap& map, const MixtureParams& p, const Eigen::VectorXd& psi_hat, const Eigen::MatrixXd& W,
             long long n) {
    const int df = map.dim() - p.K() * p.d() - (p.K() - 1);
    return j_test_from_residual(psi_hat - map.mixture_stack(p), W, n, df);
}

double confidence_radius(double s_min, int D, long long n, double alpha) {
    if (!(s_min > 0)) throw Error(ErrorCode::InvalidArgument, "confidence radius needs s_min > 0");
    if (D < 1 || n < 1) throw Error(ErrorCode::InvalidArgument, "confidence radius needs D >= 1 and n >= 1");
    return std::sqrt(chi2_quantile(1.0 - alpha, D) / static_cast<double>(n)) / s_min;
}

double whitened_jacobian_smin(const Eigen::MatrixXd& G, const Eigen::MatrixXd& W) {
    return std::sqrt(quotient_fisher_from_jacobian(G, W).sigma_min);
}

MixtureParams align_to(const FiniteGroup& G, const MixtureParams& est, const MixtureParams& ref) {
    if (est.K() != ref.K()) throw Error(ErrorCode::DimensionMismatch, "align_to needs equal K");
    const auto match = bottleneck_matching(cost_matrix(G, ref.thetas, est.thetas));
    MixtureParams out = est;
    for (int k = 0; k < ref.K(); ++k) {
        const Eigen::VectorXd& t = est.thetas[match.assignment[k]];
        double best = std::numeric_limits<double>::infinity();
        for (int g = 0; g < G.order(); ++g) {
            const Eigen::VectorXd img = G.apply(g, t);
            const double dist = (img - ref.thetas[k]).norm();
            if (dist < best) {
                best = dist;
                out.thetas[k] = img;
            }
        }
        out.weights[k] = est.weights[match.assignment[k]];
    }
    return out;
}

Eigen::MatrixXd inverse_weight(const Eigen::MatrixXd& Sigma_hat, double ridge) {
    const Eigen::Index D = Sigma_hat.rows();
    Eigen::MatrixXd S = Sigma_hat;
    if (ridge < 0) {
        S.diagonal() *= 1.0 + kRelativeRidge;
    } else {
        S.diagonal().array() += ridge;
    }
    Eigen::MatrixXd Winv = S.ldlt().solve(Eigen::MatrixXd::Identity(D, D));
    return 0.5 * (Winv + Winv.transpose());
}

// ---------------------------------------------------------------------------
// Greedy moment selection

GreedyResult greedy_moment_select(const FiniteGroup& G, const std::vector<int>& candidates,
                                  const std::vector<int>& base, int budget, const MixtureParams& probe,
                                  const WeightFactory& weight, const Eigen::MatrixXd* data) {
    if (base.empty()) throw Error(ErrorCode::InvalidArgument, "greedy selection needs a nonempty base set");
    auto evaluate = [&](const std::vector<int>& degrees) {
        GreedyStep step;
        InvariantMap map(G, degrees);
        step.degrees = map.degrees();
        const Eigen::MatrixXd W = weight ? weight(map) : Eigen::MatrixXd::Identity(map.dim(), map.dim());
        step.sigma_min = map.dim() > 0 ? quotient_fisher_diag(map, probe, W).sigma_min : 0.0;
        if (data && map.dim() > 0) {
            const Eigen::MatrixXd F = map.feature_matrix(*data);
            const Eigen::VectorXd psi = F.colwise().mean().transpose();
            const Eigen::MatrixXd Wd = inverse_weight(covariance(F).matrix, 0.0);
            FitConfig cfg;
            cfg.init = {probe.thetas};
            cfg.restarts = 0;
            cfg.record_trajectory = false;
            const FitReport rep = fit(map, psi, Wd, probe.K(), probe.sigma2, cfg);
            step.j = j_test(map, rep.params, psi, Wd, data->rows());
            step.gmm_ic = step.j->J + std::log(static_cast<double>(data->rows())) * step.j->df;
        }
        return step;
    };

    GreedyResult out;
    std::vector<int> current(base);
    std::sort(current.begin(), current.end());
    out.visited.push_back(evaluate(current));
    for (int b = 0; b < budget; ++b) {
        std::optional<GreedyStep> best;
        int best_deg = -1;
        bool best_nonempty = false;
        for (int c : candidates) {
            if (std::find(current.begin(), current.end(), c) != current.end()) continue;
            std::vector<int> trial(current);
            trial.push_back(c);
            GreedyStep s = evaluate(trial);
            const bool nonempty = invariant_basis(G, c)->dim() > 0;
            const double tol = 1e-12 * (1.0 + std::abs(s.sigma_min));
            bool better = false;
            if (!best) {
                better = true;
            } else if (s.sigma_min > best->sigma_min + tol) {
                better = true;
            } else if (s.sigma_min >= best->sigma_min - tol) {
                if (nonempty != best_nonempty) {
                    better = nonempty;
                } else {
                    better = c < best_deg;
                }
            }
            if (better) {
                best = std::move(s);
                best_deg = c;
                best_nonempty = nonempty;
            }
        }
        if (!best) break;
        current = best->degrees;
        out.visited.push_back(std::move(*best));
    }
    out.selected = current;
    return out;
}

}  // namespace orbitmix
