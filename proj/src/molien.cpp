#include "orbitmix/molien.hpp"

#include "orbitmix/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace orbitmix {

namespace {

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> out(n + 1, 0.0);
    for (std::size_t i = 0; i < a.size() && static_cast<int>(i) <= n; ++i) {
        for (std::size_t j = 0; j < b.size() && static_cast<int>(i + j) <= n; ++j) out[i + j] += a[i] * b[j];
    }
    return out;
}

// Series of prod_i 1/(1 - t^{deg_i}) times a numerator polynomial.
std::vector<double> degree_product(const std::vector<int>& degrees, const std::vector<double>& numerator, int n) {
    std::vector<double> den{1.0};
    for (int dg : degrees) {
        std::vector<double> factor(dg + 1, 0.0);
        factor[0] = 1.0;
        factor[dg] = -1.0;
        den = poly_mul(den, factor, n);
    }
    return series_divide(numerator, den, n);
}

MolienSeries round_series(const std::vector<double>& values, MolienSource source, std::string family) {
    MolienSeries out;
    out.source = source;
    out.family = std::move(family);
    for (std::size_t m = 0; m < values.size(); ++m) {
        const double r = std::round(values[m]);
        if (std::abs(values[m] - r) > kMolienResidualTol) {
            std::ostringstream os;
            os << "Molien coefficient of degree " << m << " is " << values[m] << ", not an integer";
            throw Error(ErrorCode::NonIntegral, os.str());
        }
        out.coeffs.push_back(static_cast<long long>(r));
    }
    return out;
}

std::vector<double> closed_form_values(const GroupFamily& f, int n) {
    switch (f.kind) {
        case FamilyKind::SignFlips: return degree_product(std::vector<int>(f.n, 2), {1.0}, n);
        case FamilyKind::Symmetric: {
            std::vector<int> deg;
            for (int i = 1; i <= f.n; ++i) deg.push_back(i);
            return degree_product(deg, {1.0}, n);
        }
        case FamilyKind::Hyperoctahedral: {
            std::vector<int> deg;
            for (int i = 1; i <= f.n; ++i) deg.push_back(2 * i);
            return degree_product(deg, {1.0}, n);
        }
        case FamilyKind::Dihedral: return degree_product({2, f.n}, {1.0}, n);
        case FamilyKind::CyclicWeighted: {
            // Real 2x2 rotation blocks: each contributes 1/((1 - z t)(1 - conj(z) t)) = 1/(1 - 2 cos(a) t + t^2).
            std::vector<double> avg(n + 1, 0.0);
            for (int k = 0; k < f.n; ++k) {
                std::vector<double> den{1.0};
                for (int w : f.weights) {
                    const double a = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long long>(k) * w) % f.n) / f.n;
                    den = poly_mul(den, {1.0, -2.0 * std::cos(a), 1.0}, n);
                }
                auto s = series_divide({1.0}, den, n);
                for (int m = 0; m <= n; ++m) avg[m] += s[m] / f.n;
            }
            return avg;
        }
        case FamilyKind::Product: {
            std::vector<double> acc{1.0};
            for (const auto& factor : f.factors) acc = poly_mul(acc, closed_form_values(factor, n), n);
            acc.resize(n + 1, 0.0);
            return acc;
        }
    }
    throw Error(ErrorCode::Unsupported, "no closed form for family");
}

std::vector<int> parse_int_list(std::string_view s) {
    std::vector<int> out;
    std::string buf(s);
    std::stringstream ss(buf);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "cannot parse integer list '" + buf + "'");
        }
    }
    return out;
}

}  // namespace

std::vector<double> series_divide(const std::vector<double>& num, const std::vector<double>& den, int n) {
    if (den.empty() || den[0] == 0.0) throw Error(ErrorCode::InvalidArgument, "series_divide: zero constant term");
    std::vector<double> out(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) {
        double v = k < static_cast<int>(num.size()) ? num[k] : 0.0;
        for (int j = 1; j <= k && j < static_cast<int>(den.size()); ++j) v -= den[j] * out[k - j];
        out[k] = v / den[0];
    }
    return out;
}

std::vector<double> det_one_minus_tq(const Eigen::MatrixXd& Q) {
    // Characteristic polynomial det(lambda I - Q) = sum_k a_k lambda^{p-k}; then det(I - tQ) = sum_k a_k t^k.
    const int p = static_cast<int>(Q.rows());
    std::vector<double> a(p + 1, 0.0);
    a[0] = 1.0;
    Eigen::MatrixXd Mk = Eigen::MatrixXd::Zero(p, p);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
    for (int k = 1; k <= p; ++k) {
        Mk = Q * Mk + a[k - 1] * I;
        a[k] = -(Q * Mk).trace() / k;
    }
    return a;
}

MolienSeries molien_generic(const FiniteGroup& G, int max_degree) {
    if (max_degree < 0) throw Error(ErrorCode::InvalidArgument, "max_degree must be >= 0");
    std::vector<double> avg(max_degree + 1, 0.0);
    for (int i = 0; i < G.order(); ++i) {
        auto s = series_divide({1.0}, det_one_minus_tq(G.matrix(i)), max_degree);
        for (int m = 0; m <= max_degree; ++m) avg[m] += s[m];
    }
    for (double& v : avg) v /= G.order();
    return round_series(avg, MolienSource::Generic, G.spec());
}

MolienSeries molien_family(const GroupFamily& family, int max_degree) {
    if (max_degree < 0) throw Error(ErrorCode::InvalidArgument, "max_degree must be >= 0");
    return round_series(closed_form_values(family, max_degree), MolienSource::ClosedForm, family.spec());
}

MolienSeries molien_family(std::string_view family, int max_degree) {
    if (max_degree < 0) throw Error(ErrorCode::InvalidArgument, "max_degree must be >= 0");
    if (family.starts_with("platonic:")) {
        auto which = family.substr(9);
        std::vector<int> deg;
        int extra = 0;
        if (which == "T") {
            deg = {2, 3, 4};
            extra = 6;
        } else if (which == "O") {
            deg = {2, 4, 6};
            extra = 9;
        } else if (which == "I") {
            deg = {2, 6, 10};
            extra = 15;
        } else {
            throw Error(ErrorCode::Unsupported, "platonic group must be T, O or I");
        }
        std::vector<double> num(extra + 1, 0.0);
        num[0] = 1.0;
        num[extra] = 1.0;
        return round_series(degree_product(deg, num, max_degree), MolienSource::ClosedForm, std::string(family));
    }
    if (family.starts_with("gmpn:")) {
        auto v = parse_int_list(family.substr(5));
        if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "gmpn spec is gmpn:m,p,n");
        const int m = v[0], p = v[1], n = v[2];
        if (m < 1 || p < 1 || n < 1 || m % p != 0) {
            throw Error(ErrorCode::InvalidArgument, "G(m,p,n) needs positive m, p, n with p dividing m");
        }
        std::vector<int> deg;
        for (int i = 1; i < n; ++i) deg.push_back(i * m);
        deg.push_back(m * n / p);
        return round_series(degree_product(deg, {1.0}, max_degree), MolienSource::ClosedForm, std::string(family));
    }
    return molien_family(GroupFamily::parse(family), max_degree);
}

DimBudget dim_budget(const MolienSeries& series, int m_star) {
    if (m_star < 0 || m_star > series.max_degree()) {
        throw Error(ErrorCode::InvalidArgument, "m_star outside the computed series range");
    }
    DimBudget b;
    for (int m = 0; m <= m_star; ++m) b.inclusive += series.coeffs[m];
    b.exclusive = b.inclusive - series.coeffs[0];
    return b;
}

}  // namespace orbitmix
