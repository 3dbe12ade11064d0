#pragma once

namespace orbitmix {

/// Regularized upper incomplete gamma Q(a, x), series for x < a+1 and Lentz continued fraction otherwise.
double gamma_q(double a, double x);
double gamma_p(double a, double x);

/// P(chi^2_df > x).
double chi2_upper_tail(double x, double df);
double chi2_cdf(double x, double df);

/// Quantile q with chi2_cdf(q, df) = p, by bisection.
double chi2_quantile(double p, double df);

}  // namespace orbitmix
