#include "orbitmix/error.hpp"
#include "orbitmix/folded_model.hpp"
#include "orbitmix/molien.hpp"
#include "orbitmix/sym_tensor.hpp"

#include <boost/math/special_functions/binomial.hpp>

#include <doctest.h>

#include <cmath>

using namespace orbitmix;

namespace {

// Integer power series of num / prod_i (1 - t^{deg_i}), by repeated prefix sums.
std::vector<long long> expand(std::vector<long long> num, const std::vector<int>& degrees, int n) {
    num.resize(n + 1, 0);
    for (int deg : degrees)
        for (int k = deg; k <= n; ++k) num[k] += num[k - deg];
    return num;
}

std::vector<long long> coeffs(const char* spec, int n) { return molien_generic(FiniteGroup::parse(spec), n).coeffs; }

// Number of partitions of m into at most d parts.
long long partitions(int m, int d) {
    std::vector<int> parts;
    for (int i = 1; i <= d; ++i) parts.push_back(i);
    return expand({1}, parts, m)[m];
}

}  // namespace

TEST_CASE("tiny-table rows") {
    CHECK(coeffs("signflips:3", 4) == std::vector<long long>{1, 0, 3, 0, 6});
    CHECK(coeffs("hyperoct:2", 4) == std::vector<long long>{1, 0, 1, 0, 2});
    CHECK(coeffs("sym:4", 4)[4] == 5);
    for (int d = 1; d <= 4; ++d) {
        const auto c = coeffs(("signflips:" + std::to_string(d)).c_str(), 4);
        CHECK(c[2] == d);
        CHECK(c[4] == static_cast<long long>(boost::math::binomial_coefficient<double>(d + 1, 2)));
    }
    for (int d = 2; d <= 3; ++d) CHECK(coeffs(("hyperoct:" + std::to_string(d)).c_str(), 4)[4] == 2);
    for (int d = 2; d <= 4; ++d)
        for (int m = 0; m <= 6; ++m) CHECK(coeffs(("sym:" + std::to_string(d)).c_str(), 6)[m] == partitions(m, d));
}

TEST_CASE("closed forms against the series oracle") {
    CHECK(molien_family("dihedral:3", 4).coeffs == std::vector<long long>{1, 0, 1, 1, 1});
    CHECK(molien_family("platonic:T", 6).coeffs == expand({1, 0, 0, 0, 0, 0, 1}, {2, 3, 4}, 6));
    CHECK(molien_family("gmpn:2,1,2", 8).coeffs == molien_generic(FiniteGroup::parse("hyperoct:2"), 8).coeffs);
    CHECK(molien_family("gmpn:2,1,2", 8).coeffs == expand({1}, {2, 4}, 8));
    for (int m = 5; m <= 8; ++m) {
        CHECK(molien_family("dihedral:" + std::to_string(m), 4).coeffs[4] == 1);
    }
    CHECK(molien_family("platonic:O", 0).coeffs == std::vector<long long>{1});
    CHECK_THROWS_AS(molien_family("platonic:Q", 4), Error);
}

TEST_CASE("three-way agreement on enumerable families") {
    std::vector<std::string> specs;
    for (int d = 1; d <= 4; ++d) specs.push_back("signflips:" + std::to_string(d));
    for (int d = 2; d <= 4; ++d) specs.push_back("sym:" + std::to_string(d));
    for (int d = 2; d <= 3; ++d) specs.push_back("hyperoct:" + std::to_string(d));
    for (int m = 3; m <= 6; ++m) specs.push_back("dihedral:" + std::to_string(m));
    specs.push_back("cyclic:4:1,3");
    for (const auto& s : specs) {
        CAPTURE(s);
        const auto G = FiniteGroup::parse(s);
        const auto gen = molien_generic(G, 6);
        const auto closed = molien_family(G.family(), 6);
        CHECK(gen.coeffs == closed.coeffs);
        CHECK(gen.source == MolienSource::Generic);
        CHECK(closed.source == MolienSource::ClosedForm);
        for (int m = 0; m <= 6; ++m) CHECK(std::llround(reynolds_matrix(G, m).trace()) == gen.coeffs[m]);
    }
}

TEST_CASE("direct sums multiply") {
    const auto prod = coeffs("product:sym:2;dihedral:3", 6);
    const auto a = coeffs("sym:2", 6), b = coeffs("dihedral:3", 6);
    for (int m = 0; m <= 6; ++m) {
        long long c = 0;
        for (int k = 0; k <= m; ++k) c += a[k] * b[m - k];
        CHECK(prod[m] == c);
    }
}

TEST_CASE("budgets") {
    for (int d = 2; d <= 3; ++d) {
        CHECK(dim_budget(molien_generic(FiniteGroup::parse("hyperoct:" + std::to_string(d)), 4), 4).exclusive == 3);
    }
    // D_m: the generator degrees {2, m} carry 1 + 1 coordinates for odd m; the full budget through m
    // also counts powers of the degree-2 invariant, so it is 2 only for m = 3.
    const auto d3 = molien_family("dihedral:3", 3);
    CHECK(dim_budget(d3, 3).exclusive == 2);
    CHECK(dim_budget(d3, 3).inclusive == 3);
    for (int m = 3; m <= 7; ++m) {
        const auto G = FiniteGroup::parse("dihedral:" + std::to_string(m));
        const auto s = molien_family(G.family(), m);
        const InvariantMap gens(G, {2, m});
        CHECK(gens.dim() == s.coeffs[2] + s.coeffs[m]);
        if (m % 2 == 1) CHECK(gens.dim() == 2);
        long long total = 0;
        for (int k = 1; k <= m; ++k) total += s.coeffs[k];
        CHECK(dim_budget(s, m).exclusive == total);
        CHECK(dim_budget(s, 0).exclusive == 0);
    }
    CHECK_THROWS_AS(dim_budget(molien_family("sym:2", 3), 4), Error);
}

TEST_CASE("series helpers") {
    // det(I - tQ) for a rotation by angle a is 1 - 2 cos(a) t + t^2
    Eigen::Matrix2d r;
    r << 0, -1, 1, 0;
    const auto p = det_one_minus_tq(r);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == doctest::Approx(1));
    CHECK(std::abs(p[1]) <= 1e-15);
    CHECK(p[2] == doctest::Approx(1));
    const auto s = series_divide({1}, {1, -1}, 5);
    for (double v : s) CHECK(v == doctest::Approx(1));
    CHECK_THROWS_AS(series_divide({1}, {0, 1}, 3), Error);
}
