#include "orbitmix/error.hpp"
#include "orbitmix/selection.hpp"
#include "orbitmix/stack_estimators.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
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

// Distance from p to a segment, by dense search along it.
double facet_distance(const Eigen::VectorXd& p, const std::vector<Eigen::VectorXd>& facet) {
    double best = std::numeric_limits<double>::infinity();
    const int steps = 2000;
    if (facet.size() == 2) {
        for (int i = 0; i <= steps; ++i) {
            const double a = static_cast<double>(i) / steps;
            best = std::min(best, (p - (a * facet[0] + (1 - a) * facet[1])).norm());
        }
    }
    return best;
}

}  // namespace

TEST_CASE("simplex margins") {
    std::vector<Eigen::VectorXd> e = {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(0, 0, 1)};
    const auto m = simplex_margin(e, Eigen::Vector3d(0.5, 0.25, 0.25));
    for (int j = 0; j < 3; ++j) CHECK(m.heights[j] == doctest::Approx(std::sqrt(1.5)));
    CHECK(m.distances[0] == doctest::Approx(0.5 * std::sqrt(1.5)));
    CHECK(m.gamma == doctest::Approx(0.25 * std::sqrt(1.5)));

    // dist(Psi*, F_1) by search over the opposite edge
    const Eigen::VectorXd point = 0.5 * e[0] + 0.25 * e[1] + 0.25 * e[2];
    CHECK(facet_distance(point, {e[1], e[2]}) == doctest::Approx(m.distances[0]).epsilon(1e-6));

    const std::vector<Eigen::VectorXd> seg = {Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 4)};
    CHECK(simplex_margin(seg, Eigen::Vector2d(0.3, 0.7)).gamma == doctest::Approx(0.3 * 5));
    double prev = 1e300;
    for (double w : {0.2, 0.02, 0.002}) {
        const double g = simplex_margin(seg, Eigen::Vector2d(w, 1 - w)).distances[0];
        CHECK(g < prev);
        prev = g;
    }
    CHECK(std::isinf(simplex_margin({Eigen::Vector2d(1, 1)}, Eigen::VectorXd::Ones(1)).gamma));

    const std::vector<Eigen::VectorXd> line = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2)};
    try {
        simplex_margin(line, Eigen::Vector3d(0.3, 0.3, 0.4));
        FAIL("expected DEGENERATE_SIMPLEX");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::DegenerateSimplex);
    }
}

TEST_CASE("margin is 1-Lipschitz in the represented point") {
    // gamma(Psi) = dist(Psi, relative boundary) for a segment: moving Psi along the segment by delta moves gamma by <= delta
    const std::vector<Eigen::VectorXd> seg = {Eigen::Vector2d(0, 0), Eigen::Vector2d(3, 4)};
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int t = 0; t < 50; ++t) {
        const double a = u(rng), b = u(rng);
        const double ga = simplex_margin(seg, Eigen::Vector2d(a, 1 - a)).gamma;
        const double gb = simplex_margin(seg, Eigen::Vector2d(b, 1 - b)).gamma;
        const Eigen::VectorXd pa = a * seg[0] + (1 - a) * seg[1], pb = b * seg[0] + (1 - b) * seg[1];
        CHECK(std::abs(ga - gb) <= (pa - pb).norm() + 1e-12);
    }
}

TEST_CASE("Caratheodory reduction") {
    const std::vector<Eigen::VectorXd> ok = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)};
    const auto same = caratheodory_reduce(ok, Eigen::Vector2d(0.4, 0.6));
    CHECK(same.atoms.size() == 2);
    CHECK(same.weights[0] == doctest::Approx(0.4));

    std::vector<Eigen::VectorXd> pts;
    for (double v : {0.0, 1.0, 2.0}) pts.push_back(Eigen::VectorXd::Constant(1, v));
    const auto red = caratheodory_reduce(pts, Eigen::Vector3d(0.25, 0.5, 0.25));
    CHECK(red.atoms.size() <= 2);
    double point = 0;
    for (std::size_t j = 0; j < red.atoms.size(); ++j) point += red.weights[j] * red.atoms[j][0];
    CHECK(std::abs(point - 1.0) <= 1e-10);
    CHECK(std::abs(red.weights.sum() - 1) <= 1e-12);
    CHECK(red.weights.minCoeff() >= 0);

    const std::vector<Eigen::VectorXd> dup = {Eigen::Vector2d(1, 2), Eigen::Vector2d(5, 0), Eigen::Vector2d(1, 2)};
    const auto merged = caratheodory_reduce(dup, Eigen::Vector3d(0.2, 0.5, 0.3));
    REQUIRE(merged.atoms.size() == 2);
    for (std::size_t j = 0; j < 2; ++j) {
        if (merged.atoms[j] == Eigen::Vector2d(1, 2)) CHECK(merged.weights[j] == doctest::Approx(0.5));
    }

    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 30; ++t) {
        const int D = 2 + t % 3, n = 9;
        std::vector<Eigen::VectorXd> atoms;
        Eigen::VectorXd w(n);
        for (int j = 0; j < n; ++j) {
            Eigen::VectorXd a(D);
            for (auto& v : a) v = nd(rng);
            atoms.push_back(a);
            w[j] = std::abs(nd(rng));
        }
        w /= w.sum();
        Eigen::VectorXd target = Eigen::VectorXd::Zero(D);
        for (int j = 0; j < n; ++j) target += w[j] * atoms[j];
        const auto r = caratheodory_reduce(atoms, w);
        CHECK(static_cast<int>(r.atoms.size()) <= D + 1);
        Eigen::VectorXd got = Eigen::VectorXd::Zero(D);
        for (std::size_t j = 0; j < r.atoms.size(); ++j) got += r.weights[j] * r.atoms[j];
        CHECK((got - target).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("dual certificates") {
    const std::vector<Eigen::VectorXd> face = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)};
    CHECK_FALSE(dual_certificate(face, {Eigen::Vector2d(0.5, 0.0), Eigen::Vector2d(0.5, 3.0)}).has_value());

    const auto one = dual_certificate({Eigen::Vector2d(2, 2)}, {Eigen::Vector2d(-3, 0), Eigen::Vector2d(0, -4)});
    REQUIRE(one);
    CHECK(one->eta > 0);
    CHECK(one->lambda.norm() == doctest::Approx(1.0));
    CHECK(one->lambda.dot(Eigen::Vector2d(2, 2)) == doctest::Approx(one->offset));

    const std::vector<Eigen::VectorXd> line = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2)};
    CHECK_THROWS_AS(dual_certificate(line, {Eigen::Vector2d(5, 0)}), Error);

    SUBCASE("well-separated hyperoctahedral image grid") {
        const auto G = FiniteGroup::parse("hyperoct:2");
        const auto truth = scenario();
        auto grid_certificate = [&](const InvariantMap& map) {
            const std::vector<Eigen::VectorXd> verts = {map.phi(truth.thetas[0], truth.sigma2), map.phi(truth.thetas[1], truth.sigma2)};
            // probes away from the true atoms' orbits
            std::vector<Eigen::VectorXd> probes;
            for (const auto& v : probe_grid(map, truth.sigma2, Eigen::Vector2d(0, 0), Eigen::Vector2d(5, 5), 11)) {
                if ((v - verts[0]).norm() > 1e-6 * v.norm() && (v - verts[1]).norm() > 1e-6 * v.norm()) probes.push_back(v);
            }
            REQUIRE(probes.size() > 100);
            return std::make_pair(verts, dual_certificate(verts, probes));
        };
        // Through degree 4 the image is a surface in R^3 whose chord between the atoms is not an exposed
        // face of the probe hull (an LP over all functionals gives margin 0), so no certificate exists.
        CHECK_FALSE(grid_certificate(InvariantMap::up_to(G, 4)).second.has_value());
        // through degree 8 the LP optimum is eta ~ 0.0098
        const InvariantMap map = InvariantMap::up_to(G, 8);
        const auto [verts, cert] = grid_certificate(map);
        REQUIRE(cert);
        CHECK(cert->eta == doctest::Approx(0.0098).epsilon(0.05));
        // the gap in stack units between the face and the probes, from the unit-normal functional
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& v : probe_grid(map, truth.sigma2, Eigen::Vector2d(0, 0), Eigen::Vector2d(5, 5), 11)) {
            if ((v - verts[0]).norm() > 1e-6 * v.norm() && (v - verts[1]).norm() > 1e-6 * v.norm()) top = std::max(top, cert->lambda.dot(v));
        }
        const double gap = cert->offset - top;
        CHECK(gap > 0);
        CHECK(cert->lambda.dot(verts[0]) == doctest::Approx(cert->offset));
        CHECK(cert->lambda.dot(verts[1]) == doctest::Approx(cert->offset));
        MESSAGE("certificate eta " << cert->eta << ", gap " << gap);

        // perturbing the target by gap/8 moves the recovered weights by at most delta/|v1 - v2|, the
        // barycentric change of the projection onto the segment (1e-7 covers the solver's accuracy at this scale)
        const Eigen::MatrixXd M = map.atom_matrix(truth.thetas, truth.sigma2);
        const Eigen::VectorXd psi = M * truth.weights;
        const double delta = gap / 8;
        const double sep = (verts[0] - verts[1]).norm();
        std::mt19937_64 rng(17);
        std::normal_distribution<double> nd;
        for (int r = 0; r < 20; ++r) {
            Eigen::VectorXd dir(psi.size());
            for (auto& x : dir) x = nd(rng);
            dir.normalize();
            const Eigen::VectorXd w = weight_step(M, psi + delta * dir, Eigen::MatrixXd::Identity(psi.size(), psi.size()));
            CHECK((w - truth.weights).cwiseAbs().maxCoeff() <= delta / sep + 1e-7);
        }
    }
}

TEST_CASE("probe grid") {
    const auto G = FiniteGroup::parse("dihedral:3");
    const InvariantMap map = InvariantMap::up_to(G, 3);
    const auto pts = probe_grid(map, isotropic(2, 1.0), Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1), 5);
    CHECK(pts.size() == 25);
    CHECK((pts[0] - map.phi(Eigen::Vector2d(-1, -1), isotropic(2, 1.0))).norm() <= 1e-14);
    const auto capped = probe_grid(InvariantMap::up_to(FiniteGroup::parse("signflips:4"), 2), isotropic(4, 1.0),
                                   Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4), 25);
    CHECK(capped.size() <= 100000);
}

TEST_CASE("threshold and selection") {
    const long long n = 50000;
    const double t = std::log(static_cast<double>(n));
    CHECK(selection_threshold(n, 3, 2.0, t) == doctest::Approx(2.0 * (std::sqrt((3 + t) / n) + (3 + t) / n)));
    ResidualCurve zero;
    zero.Ks = {1, 2, 3};
    zero.residuals = {0, 0, 0};
    CHECK(select_k(zero, n, 3) == 1);
    ResidualCurve none;
    none.Ks = {1, 2};
    none.residuals = {5, 4};
    CHECK(select_k(none, n, 3) == 3);
    CHECK(none.K_hat == 3);
    CHECK(none.eta == doctest::Approx(selection_threshold(n, 3, 2.0, t)));
}

TEST_CASE("residual curves") {
    const auto G = FiniteGroup::parse("hyperoct:2");
    const InvariantMap map = InvariantMap::up_to(G, 4);
    const auto truth = scenario();
    FitConfig cfg;
    cfg.restarts = 5;
    cfg.seed = 8;

    SUBCASE("exact stack, well separated") {
        const auto curve = residual_curve(map, map.mixture_stack(truth), 3, truth.sigma2, cfg);
        REQUIRE(curve.residuals.size() == 3);
        std::vector<Eigen::VectorXd> verts = {map.phi(truth.thetas[0], truth.sigma2), map.phi(truth.thetas[1], truth.sigma2)};
        // The margin is the distance from the stack to the one-atom image: a grid over the fundamental domain
        // 0 <= b <= a, then a shrinking pattern search from the best grid point. The facet distance of the
        // simplex only bounds it from above, since the one-atom image comes much closer to the stack than
        // either vertex does.
        const Eigen::VectorXd psi = map.mixture_stack(truth);
        auto dist = [&](const Eigen::Vector2d& t) { return (psi - map.phi(t, truth.sigma2)).norm(); };
        Eigen::Vector2d best(0, 0);
        double margin = dist(best);
        for (double a = 0; a <= 6; a += 0.01)
            for (double b = 0; b <= a; b += 0.01)
                if (dist(Eigen::Vector2d(a, b)) < margin) margin = dist(Eigen::Vector2d(a, b)), best = Eigen::Vector2d(a, b);
        for (double h = 0.01; h > 1e-9; h *= 0.5) {
            for (bool moved = true; moved;) {
                moved = false;
                for (const Eigen::Vector2d& step : {Eigen::Vector2d(h, 0), Eigen::Vector2d(-h, 0), Eigen::Vector2d(0, h),
                                                   Eigen::Vector2d(0, -h), Eigen::Vector2d(h, h), Eigen::Vector2d(-h, -h),
                                                   Eigen::Vector2d(h, -h), Eigen::Vector2d(-h, h)}) {
                    if (dist(best + step) < margin) margin = dist(best + step), best += step, moved = true;
                }
            }
        }
        MESSAGE("r(1) " << curve.residuals[0] << ", grid margin " << margin);
        CHECK(curve.residuals[0] <= margin + 1e-9);
        CHECK(curve.residuals[0] >= margin - 1e-6);
        CHECK(curve.residuals[0] <= simplex_margin(verts, truth.weights).gamma);
        CHECK(curve.residuals[1] < 1e-8);
        for (std::size_t k = 1; k < curve.residuals.size(); ++k) CHECK(curve.residuals[k] <= curve.residuals[k - 1]);
    }
    SUBCASE("data from a one-component model") {
        MixtureParams one;
        one.thetas = {Eigen::Vector2d(2, 1)};
        one.weights = Eigen::VectorXd::Ones(1);
        one.sigma2 = truth.sigma2;
        for (int r = 0; r < 3; ++r) {
            const Eigen::MatrixXd x = sample(one, G, 20000, 70 + r);
            const Eigen::VectorXd psi = empirical_stack(map, x).values;
            auto curve = residual_curve(map, psi, 3, one.sigma2, cfg);
            CHECK(curve.residuals[0] <= (psi - map.mixture_stack(one)).norm() + 1e-9);
            for (std::size_t k = 1; k < curve.residuals.size(); ++k) CHECK(curve.residuals[k] <= curve.residuals[k - 1]);
            CHECK(select_k(curve, 20000, map.dim(), 4.0) == 1);
        }
    }
}
