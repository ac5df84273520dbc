#include <doctest.h>

#include <cmath>

#include "msmpam/rng.hpp"
#include "msmpam/stats.hpp"

using namespace msmpam;

namespace {

// Direct binomial-CDF inversion oracle for the Clopper-Pearson bounds.
double binom_cdf_direct(int k, int n, double p) {
    double cdf = 0.0;
    for (int i = 0; i <= k; ++i) {
        double logterm = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                         i * std::log(p) + (n - i) * std::log1p(-p);
        cdf += std::exp(logterm);
    }
    return cdf;
}

double cp_lower_oracle(int x, int n, double alpha) {
    if (x == 0) return 0.0;
    // largest p with P(X >= x | p) <= alpha/2  <=>  P(X <= x-1 | p) >= 1 - alpha/2
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 100; ++i) {
        double mid = 0.5 * (lo + hi);
        if (binom_cdf_direct(x - 1, n, mid) >= 1.0 - alpha / 2.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double cp_upper_oracle(int x, int n, double alpha) {
    if (x == n) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 100; ++i) {
        double mid = 0.5 * (lo + hi);
        if (binom_cdf_direct(x, n, mid) <= alpha / 2.0)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("clopper-pearson matches the binomial inversion oracle") {
    Rng rng(42);
    for (int rep = 0; rep < 20; ++rep) {
        int n = rng.uniform_int(5, 600);
        int x = rng.uniform_int(0, n);
        auto [lo, hi] = clopper_pearson(x, n);
        CHECK(lo == doctest::Approx(cp_lower_oracle(x, n, 0.05)).epsilon(1e-6));
        CHECK(hi == doctest::Approx(cp_upper_oracle(x, n, 0.05)).epsilon(1e-6));
    }
}

TEST_CASE("clopper-pearson frozen values") {
    auto [lo500, hi500] = clopper_pearson(500, 500);
    CHECK(lo500 == doctest::Approx(0.9926).epsilon(1e-3));
    CHECK(hi500 == doctest::Approx(1.0));
    auto [lo, hi] = clopper_pearson(475, 500);
    CHECK(lo == doctest::Approx(0.927).epsilon(2e-3));
    CHECK(hi == doctest::Approx(0.967).epsilon(2e-3));
}

TEST_CASE("incomplete beta inverse round-trips") {
    Rng rng(7);
    for (int rep = 0; rep < 30; ++rep) {
        double a = rng.uniform(0.5, 20.0), b = rng.uniform(0.5, 20.0), p = rng.uniform();
        double x = incbeta_inv(a, b, p);
        CHECK(incbeta(a, b, x) == doctest::Approx(p).epsilon(1e-8));
    }
}

TEST_CASE("normal quantile inverts the cdf") {
    for (double p : {0.001, 0.025, 0.1, 0.5, 0.9, 0.975, 0.999})
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
}

TEST_CASE("adaptive integration hits closed forms") {
    CHECK(integrate([](double x) { return x * x; }, 0.0, 3.0, 1e-10) == doctest::Approx(9.0).epsilon(1e-9));
    CHECK(integrate([](double x) { return std::exp(-x); }, 0.0, 50.0, 1e-10) ==
          doctest::Approx(1.0).epsilon(1e-8));
    CHECK(integrate([](double x) { return std::sin(x); }, 0.0, M_PI, 1e-10) ==
          doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("gamma pdf normalizes and peaks at the mode") {
    double total = integrate([](double x) { return gamma_pdf(x, 8.0, 0.5); }, 0.0, 50.0, 1e-10);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-7));
    // mode at (shape-1)*scale = 3.5
    CHECK(gamma_pdf(3.5, 8.0, 0.5) > gamma_pdf(3.2, 8.0, 0.5));
    CHECK(gamma_pdf(3.5, 8.0, 0.5) > gamma_pdf(3.8, 8.0, 0.5));
}

TEST_CASE("quantile and correlation basics") {
    std::vector<double> xs{1, 2, 3, 4, 5};
    CHECK(quantile(xs, 0.5) == doctest::Approx(3.0));
    CHECK(quantile(xs, 0.25) == doctest::Approx(2.0));
    std::vector<double> ys{2, 4, 6, 8, 10};
    CHECK(pearson_correlation(xs, ys) == doctest::Approx(1.0));
    std::vector<double> zs{5, 4, 3, 2, 1};
    CHECK(pearson_correlation(xs, zs) == doctest::Approx(-1.0));
}

TEST_CASE("rng determinism and distribution sanity") {
    Rng a = Rng::for_run(123, 7);
    Rng b = Rng::for_run(123, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng rng(99);
    double sum = 0.0, sumsq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sumsq += z * z;
    }
    CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
    CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));

    // Weibull(1.5, 10): mean = 10 * Gamma(1 + 1/1.5)
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) wsum += rng.weibull(1.5, 10.0);
    CHECK(wsum / n == doctest::Approx(10.0 * std::tgamma(1.0 + 1.0 / 1.5)).epsilon(0.02));

    // Beta(2,2): mean 0.5, var 0.05
    double bsum = 0.0, bsumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.beta(2.0, 2.0);
        bsum += x;
        bsumsq += x * x;
    }
    CHECK(bsum / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(bsumsq / n - 0.25 == doctest::Approx(0.05).epsilon(0.05));
}
