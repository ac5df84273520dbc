#include "msmpam/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "msmpam/error.hpp"

namespace msmpam {

namespace {

// theta = (log shape, beta0, betas...)
struct WeibullObjective {
    const std::vector<SurvObs>& data;
    WeibullLikelihood mode;
    int n_cov;

    double H(double t, double sigma, double lin) const { return std::pow(t, sigma) * std::exp(lin); }

    double loglik(const Eigen::VectorXd& theta) const {
        double sigma = std::exp(theta[0]);
        double ll = 0.0;
        for (const auto& o : data) {
            double lin = theta[1];
            for (int c = 0; c < n_cov; ++c) lin += theta[2 + c] * o.x[c];
            if (!o.event) {
                ll -= H(o.R, sigma, lin);
            } else if (mode == WeibullLikelihood::Exact || o.L == o.R) {
                double t = o.R;
                ll += theta[0] + (sigma - 1.0) * std::log(t) + lin - H(t, sigma, lin);
            } else {
                if (!(o.R > o.L)) fail_data("ZeroLengthInterval", "interval event needs R > L");
                double sl = std::exp(-H(o.L, sigma, lin));
                double sr = std::exp(-H(o.R, sigma, lin));
                ll += std::log(std::max(sl - sr, 1e-300));
            }
        }
        return ll;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const {
        double sigma = std::exp(theta[0]);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
        Eigen::VectorXd dH(theta.size());
        for (const auto& o : data) {
            double lin = theta[1];
            for (int c = 0; c < n_cov; ++c) lin += theta[2 + c] * o.x[c];
            auto dH_at = [&](double t) {
                // d/d(log sigma) H = H * sigma log t ; d/d(beta0) H = H ; d/d(beta_c) = H x_c
                double h = H(t, sigma, lin);
                dH[0] = h * sigma * std::log(t);
                dH[1] = h;
                for (int c = 0; c < n_cov; ++c) dH[2 + c] = h * o.x[c];
                return h;
            };
            if (!o.event) {
                dH_at(o.R);
                g -= dH;
            } else if (mode == WeibullLikelihood::Exact || o.L == o.R) {
                double t = o.R;
                dH_at(t);
                g -= dH;
                g[0] += 1.0 + sigma * std::log(t);
                g[1] += 1.0;
                for (int c = 0; c < n_cov; ++c) g[2 + c] += o.x[c];
            } else {
                double hl = H(o.L, sigma, lin), hr = H(o.R, sigma, lin);
                double sl = std::exp(-hl), sr = std::exp(-hr);
                double denom = std::max(sl - sr, 1e-300);
                // d log(S(L)-S(R)) = (-S(L) dH(L) + S(R) dH(R)) / (S(L)-S(R))
                Eigen::VectorXd dHl(theta.size()), dHr(theta.size());
                if (o.L > 0.0) {
                    dHl[0] = hl * sigma * std::log(o.L);
                    dHl[1] = hl;
                    for (int c = 0; c < n_cov; ++c) dHl[2 + c] = hl * o.x[c];
                } else {
                    dHl.setZero();
                }
                dHr[0] = hr * sigma * std::log(o.R);
                dHr[1] = hr;
                for (int c = 0; c < n_cov; ++c) dHr[2 + c] = hr * o.x[c];
                g += (-sl * dHl + sr * dHr) / denom;
            }
        }
        return g;
    }
};

}  // namespace

double WeibullFit::scale() const { return std::exp(-log_hazard_intercept / shape); }

double WeibullFit::loghazard(double t, const std::vector<double>& x) const {
    double lh = std::log(shape) + (shape - 1.0) * std::log(t) + log_hazard_intercept;
    for (std::size_t c = 0; c < x.size(); ++c) lh += betas[static_cast<Eigen::Index>(c)] * x[c];
    return lh;
}

double WeibullFit::loghazard_se(double t, const std::vector<double>& x) const {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(covariance.rows());
    grad[0] = 1.0 + shape * std::log(t);  // w.r.t. log shape
    grad[1] = 1.0;
    for (std::size_t c = 0; c < x.size(); ++c) grad[2 + static_cast<Eigen::Index>(c)] = x[c];
    return std::sqrt(std::max(0.0, grad.dot(covariance * grad)));
}

WeibullFit fit_weibull_aft(const std::vector<SurvObs>& data, WeibullLikelihood likelihood) {
    if (data.empty()) fail_data("EmptyDataset", "no observations");
    int n_cov = static_cast<int>(data.front().x.size());
    for (const auto& o : data) {
        if (static_cast<int>(o.x.size()) != n_cov) fail_data("SchemaMismatch", "ragged covariates");
        if (o.event && likelihood == WeibullLikelihood::Interval && !(o.R > o.L) && o.L != o.R)
            fail_data("ZeroLengthInterval", "interval event needs R > L");
        if (o.R <= 0.0) fail_data("NonPositiveDuration", "observation times must be > 0");
    }

    WeibullObjective obj{data, likelihood, n_cov};
    const int p = 2 + n_cov;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
    // Moment-flavored start: exponential rate = events / exposure.
    double events = 0.0, exposure = 0.0;
    for (const auto& o : data) {
        events += o.event ? 1.0 : 0.0;
        exposure += o.R;
    }
    theta[1] = std::log(std::max(events, 0.5) / exposure);

    double ll = obj.loglik(theta);
    const double grad_tol = 1e-8;
    auto hessian = [&](const Eigen::VectorXd& th) {
        // Central differences of the analytic gradient.
        Eigen::MatrixXd Hm(p, p);
        for (int j = 0; j < p; ++j) {
            double h = 1e-5 * (1.0 + std::fabs(th[j]));
            Eigen::VectorXd tp = th, tm = th;
            tp[j] += h;
            tm[j] -= h;
            Hm.col(j) = (obj.gradient(tp) - obj.gradient(tm)) / (2.0 * h);
        }
        return Eigen::MatrixXd(0.5 * (Hm + Hm.transpose()));
    };

    int iter = 0;
    for (; iter < 200; ++iter) {
        Eigen::VectorXd g = obj.gradient(theta);
        if (g.lpNorm<Eigen::Infinity>() < grad_tol) break;
        Eigen::VectorXd step = (-hessian(theta)).ldlt().solve(g);
        if (!step.allFinite() || step.dot(g) <= 0.0) step = g;  // ascent fallback
        double scale = 1.0;
        bool improved = false;
        for (int half = 0; half < 40 && !improved; ++half) {
            Eigen::VectorXd cand = theta + scale * step;
            double ll_new = obj.loglik(cand);
            if (std::isfinite(ll_new) && ll_new >= ll) {
                theta = cand;
                improved = true;
                ll = ll_new;
            }
            scale *= 0.5;
        }
        if (!improved) fail_numeric("NonConvergence", "Weibull AFT line search stalled");
    }
    if (obj.gradient(theta).lpNorm<Eigen::Infinity>() >= grad_tol)
        fail_numeric("NonConvergence", "Weibull AFT gradient did not reach tolerance");

    Eigen::MatrixXd Hm = hessian(theta);

    WeibullFit fit;
    fit.shape = std::exp(theta[0]);
    fit.log_hazard_intercept = theta[1];
    fit.betas = theta.tail(n_cov);
    fit.covariance = (-Hm).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    fit.iterations = iter;
    fit.loglik = ll;
    return fit;
}

NelsonAalen nelson_aalen(const std::vector<double>& time, const std::vector<int>& status) {
    if (time.size() != status.size() || time.empty()) fail_usage("BadArgument", "need matched time/status");
    std::vector<std::size_t> order(time.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });

    NelsonAalen na;
    double H = 0.0, var = 0.0;
    std::size_t at_risk = time.size();
    std::size_t i = 0;
    while (i < order.size()) {
        double t = time[order[i]];
        std::size_t deaths = 0, leaving = 0;
        while (i < order.size() && time[order[i]] == t) {
            deaths += status[order[i]] ? 1 : 0;
            ++leaving;
            ++i;
        }
        if (deaths > 0) {
            H += static_cast<double>(deaths) / static_cast<double>(at_risk);
            var += static_cast<double>(deaths) / (static_cast<double>(at_risk) * static_cast<double>(at_risk));
            na.times.push_back(t);
            na.cumhaz.push_back(H);
            na.variance.push_back(var);
        }
        at_risk -= leaving;
    }
    return na;
}

double NelsonAalen::at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return cumhaz[static_cast<std::size_t>(it - times.begin()) - 1];
}

double NelsonAalen::variance_at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return variance[static_cast<std::size_t>(it - times.begin()) - 1];
}

}  // namespace msmpam
