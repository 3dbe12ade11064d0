#include "orbitmix/chi_square.hpp"

#include "orbitmix/error.hpp"

#include <cmath>
#include <limits>

namespace orbitmix {

namespace {

constexpr double kEps = 1e-16;

double series_p(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double continued_fraction_q(double a, double x) {
    const double tiny = std::numeric_limits<double>::min() / kEps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_q(double a, double x) {
    if (!(a > 0)) throw Error(ErrorCode::InvalidArgument, "gamma_q needs a > 0");
    if (x <= 0) return 1.0;
    if (x < a + 1.0) return 1.0 - series_p(a, x);
    return continued_fraction_q(a, x);
}

double gamma_p(double a, double x) {
    if (!(a > 0)) throw Error(ErrorCode::InvalidArgument, "gamma_p needs a > 0");
    if (x <= 0) return 0.0;
    if (x < a + 1.0) return series_p(a, x);
    return 1.0 - continued_fraction_q(a, x);
}

double chi2_upper_tail(double x, double df) {
    if (df == 0) return x > 0 ? 0.0 : 1.0;
    return gamma_q(0.5 * df, 0.5 * x);
}

double chi2_cdf(double x, double df) {
    if (df == 0) return x >= 0 ? 1.0 : 0.0;
    return gamma_p(0.5 * df, 0.5 * x);
}

double chi2_quantile(double p, double df) {
    if (!(p > 0 && p < 1)) throw Error(ErrorCode::InvalidArgument, "quantile level must be in (0,1)");
    if (!(df > 0)) throw Error(ErrorCode::InvalidArgument, "chi-square df must be positive");
    double lo = 0.0, hi = std::max(1.0, df);
    while (chi2_cdf(hi, df) < p) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_cdf(mid, df) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-14 * hi) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace orbitmix
