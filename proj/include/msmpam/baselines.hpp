#pragma once

#include <Eigen/Dense>
#include <vector>

namespace msmpam {

// Single-event observation for the comparator models. Interval-censored
// events carry L < T <= R; exactly observed events have L == R == time;
// right-censored observations have event = false and time in `R`.
struct SurvObs {
    double L = 0.0;
    double R = 0.0;
    bool event = false;
    std::vector<double> x;

    static SurvObs exact(double time, bool ev, std::vector<double> covs = {}) {
        return {time, time, ev, std::move(covs)};
    }
    static SurvObs interval(double l, double r, std::vector<double> covs = {}) {
        return {l, r, true, std::move(covs)};
    }
    static SurvObs censored(double time, std::vector<double> covs = {}) {
        return {time, time, false, std::move(covs)};
    }
};

// Weibull proportional-hazards AFT: H(t|x) = t^shape * exp(beta0 + beta'x),
// parameterized internally as (log shape, beta0, beta).
struct WeibullFit {
    double shape = 1.0;
    double log_hazard_intercept = 0.0;  // beta0
    Eigen::VectorXd betas;
    Eigen::MatrixXd covariance;  // over (log shape, beta0, betas)
    int iterations = 0;
    double loglik = 0.0;

    double scale() const;  // classical Weibull scale exp(-beta0/shape)

    // log h(t|x) with delta-method standard error.
    double loghazard(double t, const std::vector<double>& x) const;
    double loghazard_se(double t, const std::vector<double>& x) const;
};

enum class WeibullLikelihood { Exact, Interval };

// MLE by Newton steps with step halving; exact mode uses (time, status),
// interval mode contributes log(S(L) - S(R)) per event.
WeibullFit fit_weibull_aft(const std::vector<SurvObs>& data, WeibullLikelihood likelihood);

// Nelson-Aalen cumulative hazard over right-censored (time, status) data,
// with variance increments d_i / n_i^2; survival by the Breslow relation
// exp(-H).
struct NelsonAalen {
    std::vector<double> times;     // event times, ascending
    std::vector<double> cumhaz;    // H(t_i)
    std::vector<double> variance;  // Var(H(t_i))

    double at(double t) const;             // step-function lookup
    double variance_at(double t) const;
    double survival(double t) const { return std::exp(-at(t)); }
};

NelsonAalen nelson_aalen(const std::vector<double>& time, const std::vector<int>& status);

}  // namespace msmpam
