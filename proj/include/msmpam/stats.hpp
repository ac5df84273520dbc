#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace msmpam {

// Small numerical/statistical toolbox shared across modules.

double gamma_pdf(double x, double shape, double scale);

// Regularized incomplete beta I_x(a, b) and its inverse in x.
double incbeta(double a, double b, double x);
double incbeta_inv(double a, double b, double p);

// Binomial CDF P(X <= k), X ~ Bin(n, p).
double binom_cdf(int k, int n, double p);

// Exact (Clopper-Pearson) two-sided confidence interval for x successes of n.
// lower = BetaQuantile(alpha/2; x, n-x+1), upper = BetaQuantile(1-alpha/2; x+1, n-x).
std::pair<double, double> clopper_pearson(int x, int n, double level = 0.95);

double normal_cdf(double z);
double normal_quantile(double p);

// Type-7 sample quantile on an unsorted copy.
double quantile(std::vector<double> xs, double p);

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);

// Adaptive Simpson quadrature with absolute tolerance.
double integrate(const std::function<double(double)>& f, double a, double b, double abs_tol);

}  // namespace msmpam
