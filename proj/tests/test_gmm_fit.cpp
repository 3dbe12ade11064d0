#include "orbitmix/chi_square.hpp"
#include "orbitmix/error.hpp"
#include "orbitmix/gmm_fit.hpp"
#include "orbitmix/orbit_metric.hpp"
#include "orbitmix/rng.hpp"
#include "orbitmix/stack_estimators.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace orbitmix;

namespace {

MixtureParams scenario() {
    MixtureParams p;
    p.thetas = {Eigen::Vector2d(3, 1), Eigen::Vector2d(1, 4)};
    p.weights = Eigen::Vector2d(0.6, 0.4);
    p.sigma2 = isotropic(2, 1.0);
    return p;
}

double grid_qp(const Eigen::MatrixXd& M, const Eigen::VectorXd& psi, const Eigen::MatrixXd& W, Eigen::VectorXd& best_w,
               double step) {
    const int K = static_cast<int>(M.cols());
    double best = 1e300;
    const int steps = static_cast<int>(std::lround(1.0 / step));
    auto value = [&](const Eigen::VectorXd& w) {
        const Eigen::VectorXd r = psi - M * w;
        return 0.5 * r.dot(W * r);
    };
    if (K == 2) {
        for (int i = 0; i <= steps; ++i) {
            const Eigen::Vector2d w(i * step, 1 - i * step);
            const double v = value(w);
            if (v < best) best = v, best_w = w;
        }
    } else {
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; i + j <= steps; ++j) {
                const Eigen::Vector3d w(i * step, j * step, 1 - (i + j) * step);
                const double v = value(w);
                if (v < best) best = v, best_w = w;
            }
    }
    return best;
}

}  // namespace

TEST_CASE("weight step examples") {
    const Eigen::MatrixXd M1 = Eigen::MatrixXd::Random(4, 1);
    CHECK(weight_step(M1, Eigen::VectorXd::Random(4), Eigen::MatrixXd::Identity(4, 4))[0] == 1.0);

    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(3, 2);
    V(0, 0) = 1;
    V(1, 1) = 1;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd w = weight_step(V, 0.3 * V.col(0) + 0.7 * V.col(1), I);
    CHECK(w[0] == doctest::Approx(0.3));
    CHECK(w[1] == doctest::Approx(0.7));
    w = weight_step(V, 1.5 * V.col(0) - 0.5 * V.col(1), I);
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(std::abs(w[1]) <= 1e-15);

    Eigen::VectorXd gw;
    grid_qp(V, 0.3 * V.col(0) + 0.7 * V.col(1), I, gw, 1e-4);
    CHECK((gw - Eigen::Vector2d(0.3, 0.7)).cwiseAbs().maxCoeff() <= 1e-4);

    Eigen::MatrixXd C(3, 2);
    C.col(0) = Eigen::Vector3d(1, 2, 3);
    C.col(1) = C.col(0);
    try {
        weight_step(C, Eigen::Vector3d(1, 1, 1), I);
        FAIL("expected COLLINEAR");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Collinear);
    }
}

TEST_CASE("weight step matches grid search on random QPs") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 40; ++t) {
        const int K = 2 + t % 2, D = 5;
        Eigen::MatrixXd M(D, K), A(D, D);
        Eigen::VectorXd psi(D);
        for (auto& v : M.reshaped()) v = nd(rng);
        for (auto& v : A.reshaped()) v = nd(rng);
        for (auto& v : psi) v = nd(rng);
        const Eigen::MatrixXd W = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(D, D);
        const Eigen::VectorXd w = weight_step(M, psi, W);
        CHECK(std::abs(w.sum() - 1) <= 1e-12);
        CHECK(w.minCoeff() >= 0);
        Eigen::VectorXd gw;
        const double gv = grid_qp(M, psi, W, gw, K == 2 ? 1e-4 : 2e-3);
        const Eigen::VectorXd r = psi - M * w;
        CHECK(0.5 * r.dot(W * r) <= gv + 1e-12);
        if (K == 2) CHECK((w - gw).cwiseAbs().maxCoeff() <= 2e-4);
    }
}

TEST_CASE("profiled gradient matches finite differences") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 6);
    const Eigen::VectorXd psi = map.mixture_stack(scenario());
    const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(map.dim(), map.dim());
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(0.5, 4.5);
    for (int t = 0; t < 10; ++t) {
        std::vector<Eigen::VectorXd> th = {Eigen::Vector2d(u(rng), u(rng)), Eigen::Vector2d(u(rng), u(rng))};
        const auto pv = profiled_objective(map, th, scenario().sigma2, psi, W);
        if (pv.weights.minCoeff() <= 1e-6) continue;  // the envelope gradient needs an interior minimizer
        for (int i = 0; i < 4; ++i) {
            auto plus = th, minus = th;
            const double h = 1e-6 * (1 + std::abs(th[i / 2][i % 2]));
            plus[i / 2][i % 2] += h;
            minus[i / 2][i % 2] -= h;
            const double fd = (profiled_objective(map, plus, scenario().sigma2, psi, W, false).objective -
                               profiled_objective(map, minus, scenario().sigma2, psi, W, false).objective) / (2 * h);
            CHECK(std::abs(fd - pv.gradient[i]) <= 1e-5 * std::max(1.0, pv.gradient.norm()));
        }
    }
}

TEST_CASE("fit recovers exact stacks") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 6);
    const auto truth = scenario();
    const Eigen::VectorXd psi = map.mixture_stack(truth);
    FitConfig cfg;
    cfg.restarts = 10;
    cfg.seed = 3;
    const auto rep = fit(map, psi, Eigen::MatrixXd::Identity(map.dim(), map.dim()), 2, truth.sigma2, cfg);
    CHECK(rep.objective < 1e-16);
    CHECK(bottleneck_orbit_error(G, rep.params.thetas, truth.thetas) < 1e-6);
    const auto aligned = align_to(G, rep.params, truth);
    CHECK((aligned.weights - truth.weights).cwiseAbs().maxCoeff() < 1e-6);
    for (std::size_t i = 1; i < rep.trajectory.size(); ++i) {
        CHECK(rep.trajectory[i].objective <= rep.trajectory[i - 1].objective + 1e-12);
    }
    for (const auto& t : rep.params.thetas) CHECK((G.canonical_rep(t) - t).norm() <= 1e-12);
}

TEST_CASE("fit in one dimension matches the closed form") {
    const auto G = FiniteGroup::parse("signflips:1");
    const InvariantMap map = InvariantMap::up_to(G, 2);
    const auto B = invariant_basis(G, 2);
    const double c = B->dual(0, 0);  // psi_2 = c * E[x^2]
    for (double second : {5.0, 1.7, 0.6}) {
        const Eigen::VectorXd psi = Eigen::VectorXd::Constant(1, c * second);
        FitConfig cfg;
        cfg.restarts = 4;
        const auto rep = fit(map, psi, Eigen::MatrixXd::Identity(1, 1), 1, isotropic(1, 1.0), cfg);
        CHECK(std::abs(rep.params.thetas[0][0]) == doctest::Approx(std::sqrt(std::max(second - 1.0, 0.0))).epsilon(1e-8));
    }
}

TEST_CASE("gradient mode with fixed and Armijo steps is monotone") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 4);
    const auto truth = scenario();
    const Eigen::MatrixXd x = sample(truth, G, 5000, 8);
    const Eigen::VectorXd psi = empirical_stack(map, x).values;
    for (StepRule rule : {StepRule::Fixed, StepRule::Armijo}) {
        FitConfig cfg;
        cfg.theta_step = ThetaStep::Gradient;
        cfg.step_rule = rule;
        cfg.step_size = 1e-3;
        cfg.max_iter = 300;
        cfg.restarts = 3;
        cfg.init = {{Eigen::Vector2d(2.5, 1.5), Eigen::Vector2d(1.5, 3.5)}};
        const auto rep = fit(map, psi, Eigen::MatrixXd::Identity(map.dim(), map.dim()), 2, truth.sigma2, cfg);
        REQUIRE(rep.trajectory.size() >= 2);
        for (std::size_t i = 1; i < rep.trajectory.size(); ++i) {
            CHECK(rep.trajectory[i].objective <= rep.trajectory[i - 1].objective + 1e-12);
        }
    }
}

TEST_CASE("alignment is a gauge move") {
    const auto G = FiniteGroup::parse("dihedral:4");
    const InvariantMap map = InvariantMap::up_to(G, 4);
    std::vector<Eigen::VectorXd> th = {Eigen::Vector2d(1.3, -0.2), Eigen::Vector2d(-0.4, 2.2)};
    const Eigen::VectorXd psi = map.phi(Eigen::Vector2d(1, 0.5), isotropic(2, 1.0));
    const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(map.dim(), map.dim());
    const double f0 = profiled_objective(map, th, isotropic(2, 1.0), psi, W).objective;
    std::vector<Eigen::VectorXd> moved = {G.canonical_rep(th[1]), G.apply(3, th[0])};
    CHECK(std::abs(profiled_objective(map, moved, isotropic(2, 1.0), psi, W).objective - f0) <= 1e-12);
}

TEST_CASE("one-step update") {
    SUBCASE("fixed point at the truth") {
        const auto G = FiniteGroup::parse("hyperoct:2");
        const InvariantMap map = InvariantMap::up_to(G, 6);
        const auto truth = scenario();
        const auto out = one_step(map, truth, map.mixture_stack(truth), Eigen::MatrixXd::Identity(map.dim(), map.dim()));
        CHECK((to_chart(out) - to_chart(truth)).norm() <= 1e-10);
    }
    SUBCASE("affine map lands on the least-squares solution") {
        std::mt19937_64 rng(23);
        std::normal_distribution<double> nd;
        Eigen::MatrixXd A(6, 3), L(6, 6);
        Eigen::VectorXd b(6), psi(6), xi0(3);
        for (auto& v : A.reshaped()) v = nd(rng);
        for (auto& v : L.reshaped()) v = nd(rng);
        for (auto& v : b) v = nd(rng);
        for (auto& v : psi) v = nd(rng);
        for (auto& v : xi0) v = nd(rng);
        const Eigen::MatrixXd W = L * L.transpose() + Eigen::MatrixXd::Identity(6, 6);
        const ChartMap Psi = [&](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return A * xi + b; };
        const Eigen::VectorXd xi = one_step_chart(Psi, A, xi0, psi, W);
        // normal equations A'W(psi - A xi - b) = 0
        CHECK((A.transpose() * W * (psi - A * xi - b)).norm() <= 1e-10);
        // bias correction of an affine map is zero
        const auto bc = bias_correct_chart(Psi, A, xi, W.inverse(), 1000);
        CHECK(bc.applied);
        CHECK(bc.b.norm() <= 1e-6);
    }
    SUBCASE("rank deficiency is reported") {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 2);
        A(0, 0) = 1;
        const ChartMap Psi = [&](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return A * xi; };
        try {
            one_step_chart(Psi, A, Eigen::Vector2d::Zero(), Eigen::Vector3d::Ones(), Eigen::MatrixXd::Identity(3, 3));
            FAIL("expected COLLINEAR");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Collinear);
        }
    }
}

TEST_CASE("one-step from a root-n perturbation is as good as a full fit") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 8);
    const auto truth = scenario();
    const int n = 20000;
    std::vector<double> one_err, fit_err;
    for (int r = 0; r < 100; ++r) {
        const Eigen::MatrixXd x = sample(truth, G, n, derive_seed(31, r));
        const Eigen::VectorXd psi = empirical_stack(map, x).values;
        const Eigen::MatrixXd W = inverse_weight(covariance(map, x).matrix);
        std::mt19937_64 rng(derive_seed(32, r));
        std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(n));
        MixtureParams start = truth;
        for (auto& t : start.thetas)
            for (auto& v : t) v += nd(rng);
        const auto one = one_step(map, start, psi, W);
        FitConfig cfg;
        cfg.init = {truth.thetas};
        cfg.restarts = 0;
        const auto full = fit(map, psi, W, 2, truth.sigma2, cfg);
        one_err.push_back(bottleneck_orbit_error(G, one.thetas, truth.thetas));
        fit_err.push_back(bottleneck_orbit_error(G, full.params.thetas, truth.thetas));
    }
    std::nth_element(one_err.begin(), one_err.begin() + 50, one_err.end());
    std::nth_element(fit_err.begin(), fit_err.begin() + 50, fit_err.end());
    MESSAGE("median one-step error " << one_err[50] << ", full fit " << fit_err[50]);
    CHECK(one_err[50] <= 1.5 * fit_err[50]);
}

TEST_CASE("curvature correction") {
    SUBCASE("Phi(theta) = theta^2 by hand") {
        const ChartMap Psi = [](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return xi.array().square(); };
        for (double th : {0.7, 2.0}) {
            const double s = 1.3;
            const Eigen::VectorXd xi = Eigen::VectorXd::Constant(1, th);
            const Eigen::MatrixXd Gm = Eigen::MatrixXd::Constant(1, 1, 2 * th);
            const auto H = chart_hessians(Psi, xi);
            CHECK(H[0](0, 0) == doctest::Approx(2.0).epsilon(1e-6));
            const auto bc = bias_correct_chart(Psi, Gm, xi, Eigen::MatrixXd::Constant(1, 1, s), 500);
            // b = 1/2 (G/s) H / (G^2/s) = 1 / (2 theta)
            CHECK(bc.b[0] == doctest::Approx(1.0 / (2 * th)).epsilon(1e-6));
            CHECK(bc.xi[0] - th == doctest::Approx(s / (8 * th * th * th * 500)).epsilon(1e-6));
        }
    }
    SUBCASE("ill-conditioned information skips the correction") {
        const ChartMap Psi = [](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return xi.array().square(); };
        Eigen::MatrixXd Gm(2, 2);
        Gm << 1, 0, 0, 1e-6;
        const auto bc = bias_correct_chart(Psi, Gm, Eigen::Vector2d(1, 1), Eigen::MatrixXd::Identity(2, 2), 100);
        CHECK_FALSE(bc.applied);
        CHECK_FALSE(bc.message.empty());
    }
}

TEST_CASE("quotient Fisher diagnostics") {
    Eigen::MatrixXd Q = Eigen::MatrixXd::Random(6, 3);
    Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Q).householderQ() * Eigen::MatrixXd::Identity(6, 3);
    const auto qf = quotient_fisher_from_jacobian(Q, Eigen::MatrixXd::Identity(6, 6));
    CHECK((qf.I_Q - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(qf.cond == doctest::Approx(1.0));
    CHECK(qf.stability_constant == doctest::Approx(2.0));

    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 8);
    const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(map.dim(), map.dim());
    double prev = 1e300;
    for (double wk : {0.2, 0.1, 0.05}) {
        auto p = scenario();
        p.weights = Eigen::Vector2d(1 - wk, wk);
        const double s = quotient_fisher_diag(map, p, W).sigma_min;
        CHECK(s < prev);
        prev = s;
    }

    // local Lipschitz stability of the de-mixing map
    const auto truth = scenario();
    const auto q = quotient_fisher_diag(map, truth, W);
    const Eigen::VectorXd xi0 = to_chart(truth);
    std::mt19937_64 rng(24);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd a = xi0, b = xi0;
        for (auto& v : a) v += nd(rng);
        for (auto& v : b) v += nd(rng);
        const double lhs = (a - b).norm();
        const double rhs = q.stability_constant * (chart_map(map, a, 2, truth.sigma2) - chart_map(map, b, 2, truth.sigma2)).norm();
        CHECK(lhs <= rhs);
    }
}

TEST_CASE("J test") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 8);
    const auto truth = scenario();
    const auto j0 = j_test(map, truth, map.mixture_stack(truth), Eigen::MatrixXd::Identity(map.dim(), map.dim()), 1000);
    CHECK(j0.J == 0.0);
    REQUIRE(j0.p_value);
    CHECK(*j0.p_value == 1.0);
    CHECK(j0.df == map.dim() - 2 * 2 - 1);

    const auto j = j_test_from_residual(Eigen::Vector3d(0.01, -0.02, 0.005), Eigen::MatrixXd::Identity(3, 3), 5000, 2);
    CHECK(j.J == doctest::Approx(5000 * (1e-4 + 4e-4 + 2.5e-5)));
    CHECK(*j.p_value == doctest::Approx(boost::math::cdf(boost::math::complement(boost::math::chi_squared(2), j.J))).epsilon(1e-10));
    CHECK_FALSE(j_test_from_residual(Eigen::Vector3d::Zero(), Eigen::MatrixXd::Identity(3, 3), 10, -1).p_value);

    // D = 5, K = 2, d = 1 gives df = 2
    const InvariantMap m1(FiniteGroup::parse("sym:1"), {1, 2, 3, 4, 5});
    MixtureParams p;
    p.thetas = {Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, -1.0)};
    p.weights = Eigen::Vector2d(0.5, 0.5);
    p.sigma2 = isotropic(1, 1.0);
    CHECK(j_test(m1, p, m1.mixture_stack(p), Eigen::MatrixXd::Identity(5, 5), 10).df == 2);
}

TEST_CASE("chi-square routines against Boost") {
    for (double df : {0.5, 1.0, 2.0, 5.0, 17.0, 60.0}) {
        const boost::math::chi_squared dist(df);
        for (double x : {0.01, 0.5, 1.0, 3.0, 10.0, 40.0, 120.0}) {
            const double q = boost::math::cdf(boost::math::complement(dist, x));
            CHECK(std::abs(chi2_upper_tail(x, df) - q) <= 1e-10 * std::max(q, 1e-300) + 1e-300);
            CHECK(gamma_q(0.5 * df, 0.5 * x) == doctest::Approx(boost::math::gamma_q(0.5 * df, 0.5 * x)).epsilon(1e-10));
        }
        for (double p : {0.05, 0.5, 0.95, 0.999}) {
            CHECK(chi2_quantile(p, df) == doctest::Approx(boost::math::quantile(dist, p)).epsilon(1e-10));
        }
    }
}

TEST_CASE("confidence radius") {
    CHECK(confidence_radius(1.0, 1, 100, 0.05) == doctest::Approx(0.1959964).epsilon(1e-6));
    CHECK(confidence_radius(1.0, 3, 400, 0.05) == doctest::Approx(0.5 * confidence_radius(1.0, 3, 100, 0.05)));
    CHECK(confidence_radius(2.0, 3, 100, 0.05) == doctest::Approx(0.5 * confidence_radius(1.0, 3, 100, 0.05)));
    CHECK_THROWS_AS(confidence_radius(0.0, 3, 100, 0.05), Error);
}

TEST_CASE("greedy moment selection") {
    MixtureParams probe;
    probe.thetas = {Eigen::Vector2d(1.0, 2.5)};
    probe.weights = Eigen::VectorXd::Ones(1);
    probe.sigma2 = isotropic(2, 1.0);

    const auto S = FiniteGroup::parse("signflips:2");
    CHECK(greedy_moment_select(S, {3, 4}, {2}, 0, probe).selected == std::vector<int>{2});
    const auto g = greedy_moment_select(S, {3, 4}, {2}, 1, probe);
    CHECK(g.selected == std::vector<int>{2, 4});
    // an empty block leaves sigma_min alone
    const double base = g.visited[0].sigma_min;
    const InvariantMap with3(S, {2, 3});
    CHECK(quotient_fisher_diag(with3, probe, Eigen::MatrixXd::Identity(with3.dim(), with3.dim())).sigma_min ==
          doctest::Approx(base).epsilon(1e-12));
    CHECK(g.visited[1].sigma_min >= base);

    const auto B = FiniteGroup::parse("hyperoct:2");
    // one step picks the degree whose augmented set has the largest sigma_min
    int argmax = -1;
    double top = -1.0;
    for (int c : {3, 4, 6}) {
        const InvariantMap m(B, {2, c});
        const double v = m.dim() > 0 ? quotient_fisher_diag(m, probe, Eigen::MatrixXd::Identity(m.dim(), m.dim())).sigma_min : 0.0;
        if (v > top * (1 + 1e-12)) top = v, argmax = c;
    }
    CHECK(greedy_moment_select(B, {3, 4, 6}, {2}, 1, probe).selected == std::vector<int>{2, argmax});
    CHECK_THROWS_AS(greedy_moment_select(B, {4}, {}, 1, probe), Error);

    const Eigen::MatrixXd x = sample(probe, B, 4000, 5);
    const auto withdata = greedy_moment_select(B, {4, 6}, {2}, 2, probe, {}, &x);
    for (const auto& s : withdata.visited) {
        if (s.j && s.j->df >= 0) {
            CHECK(s.gmm_ic);
            CHECK(*s.gmm_ic == doctest::Approx(s.j->J + std::log(4000.0) * s.j->df));
        }
    }
}
