#include "msmpam/weights.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "msmpam/csv.hpp"
#include "msmpam/error.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

Eigen::VectorXd MultinomialFit::probabilities(const Eigen::VectorXd& x) const {
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(n_classes);
    for (int k = 1; k < n_classes; ++k) eta[k] = coefficients.row(k - 1).dot(x);
    double m = eta.maxCoeff();
    Eigen::VectorXd p = (eta.array() - m).exp();
    return p / p.sum();
}

MultinomialFit fit_multinomial_logit(const Eigen::MatrixXd& X, const std::vector<int>& classes, int n_classes) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n_classes < 2) fail_usage("BadArgument", "need >= 2 classes");
    if (static_cast<Eigen::Index>(classes.size()) != n) fail_usage("BadArgument", "class labels length mismatch");
    for (int c : classes)
        if (c < 0 || c >= n_classes) fail_usage("BadArgument", "class label out of range");

    {
        Eigen::MatrixXd gram = X.transpose() * X;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        if (eig.eigenvalues().minCoeff() < 1e-10 * std::max(eig.eigenvalues().maxCoeff(), 1e-300))
            fail_numeric("RankDeficiency", "propensity design is rank deficient");
    }

    const int K = n_classes;
    const Eigen::Index dim = (K - 1) * p;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);

    auto negloglik_grad = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
        double nll = 0.0;
        if (grad) grad->setZero();
        if (hess) hess->setZero();
        Eigen::VectorXd eta(K), prob(K);
        for (Eigen::Index i = 0; i < n; ++i) {
            eta[0] = 0.0;
            for (int k = 1; k < K; ++k) eta[k] = th.segment((k - 1) * p, p).dot(X.row(i));
            double m = eta.maxCoeff();
            prob = (eta.array() - m).exp();
            double Z = prob.sum();
            prob /= Z;
            nll -= eta[classes[i]] - m - std::log(Z);
            if (grad)
                for (int k = 1; k < K; ++k) {
                    double r = prob[k] - (classes[i] == k ? 1.0 : 0.0);
                    grad->segment((k - 1) * p, p) += r * X.row(i).transpose();
                }
            if (hess)
                for (int k = 1; k < K; ++k)
                    for (int l = 1; l < K; ++l) {
                        double w = prob[k] * ((k == l ? 1.0 : 0.0) - prob[l]);
                        hess->block((k - 1) * p, (l - 1) * p, p, p) +=
                            w * (X.row(i).transpose() * X.row(i));
                    }
        }
        return nll;
    };

    Eigen::VectorXd grad(dim);
    Eigen::MatrixXd hess(dim, dim);
    double nll = negloglik_grad(theta, nullptr, nullptr);
    MultinomialFit fit;
    fit.n_classes = K;
    for (int iter = 1; iter <= 100; ++iter) {
        negloglik_grad(theta, &grad, &hess);
        fit.grad_max = grad.lpNorm<Eigen::Infinity>();
        fit.iterations = iter;
        if (fit.grad_max < 1e-8) {
            fit.converged = true;
            break;
        }
        Eigen::VectorXd step = hess.ldlt().solve(-grad);
        double scale = 1.0;
        bool ok = false;
        for (int half = 0; half < 40 && !ok; ++half) {
            Eigen::VectorXd cand = theta + scale * step;
            double nll_new = negloglik_grad(cand, nullptr, nullptr);
            if (std::isfinite(nll_new) && nll_new <= nll) {
                theta = cand;
                nll = nll_new;
                ok = true;
            }
            scale *= 0.5;
        }
        if (!ok) break;
        if (theta.lpNorm<Eigen::Infinity>() > 50.0)
            fail_numeric("Separation", "propensity coefficients diverging (complete separation?)");
    }
    if (!fit.converged) {
        negloglik_grad(theta, &grad, nullptr);
        fit.grad_max = grad.lpNorm<Eigen::Infinity>();
        if (fit.grad_max >= 1e-8)
            fail_numeric("NonConvergence", "multinomial logit did not reach gradient tolerance");
        fit.converged = true;
    }
    fit.coefficients = Eigen::Map<Eigen::MatrixXd>(theta.data(), p, K - 1).transpose();
    return fit;
}

namespace {

// Subject covariates at state entry: the first episode out of the state.
struct StateObs {
    std::size_t subject;
    int from_state;
    int exposure_class;
    Eigen::VectorXd confounders;
};

}  // namespace

WeightTable stabilized_weights(const Dataset& dataset, const std::string& exposure,
                               const std::vector<std::string>& confounders, const WeightOptions& opts) {
    const auto& schema = dataset.schema();
    const CovariateSchema::Field* exp_field = schema.find(exposure);
    if (!exp_field) fail_data("MissingColumn", "exposure '" + exposure + "' not in schema");

    // Numeric exposures must hold small-integer class codes.
    auto class_of = [&](const TransitionRecord& r) -> int {
        std::size_t ni = 0, ci = 0;
        for (const auto& f : schema.fields) {
            if (f.name == exposure) {
                if (f.kind == CovariateSchema::Kind::Categorical) return r.categorical_covariates[ci];
                double v = r.numeric_covariates[ni];
                int code = static_cast<int>(std::lround(v));
                if (std::fabs(v - code) > 1e-9 || code < 0)
                    fail_data("SchemaMismatch", "numeric exposure must hold non-negative integer codes");
                return code;
            }
            (f.kind == CovariateSchema::Kind::Numeric ? ni : ci) += 1;
        }
        fail_data("MissingColumn", "exposure lookup failed");
    };
    auto confounder_values = [&](const TransitionRecord& r) {
        Eigen::VectorXd v(confounders.size());
        for (std::size_t j = 0; j < confounders.size(); ++j) {
            const CovariateSchema::Field* f = schema.find(confounders[j]);
            if (!f) fail_data("MissingColumn", "confounder '" + confounders[j] + "' not in schema");
            std::size_t ni = 0, ci = 0;
            for (const auto& g : schema.fields) {
                if (g.name == confounders[j]) {
                    v[static_cast<Eigen::Index>(j)] = g.kind == CovariateSchema::Kind::Numeric
                                                          ? r.numeric_covariates[ni]
                                                          : static_cast<double>(r.categorical_covariates[ci]);
                    break;
                }
                (g.kind == CovariateSchema::Kind::Numeric ? ni : ci) += 1;
            }
        }
        return v;
    };

    // One observation per (subject, from-state), covariates at state entry.
    std::vector<StateObs> obs;
    std::set<int> states;
    int n_classes = 0;
    for (std::size_t s = 0; s < dataset.subject_ids().size(); ++s) {
        std::set<int> seen;
        for (std::size_t idx : dataset.subject_episodes()[s]) {
            const auto& r = dataset.records()[idx];
            if (!seen.insert(r.from_state).second) continue;
            StateObs o;
            o.subject = s;
            o.from_state = r.from_state;
            o.exposure_class = class_of(r);
            o.confounders = confounder_values(r);
            n_classes = std::max(n_classes, o.exposure_class + 1);
            states.insert(r.from_state);
            obs.push_back(std::move(o));
        }
    }
    if (n_classes < 2) fail_data("DegenerateVariance", "exposure has a single class");

    // State-specific marginal class frequencies.
    std::map<int, std::vector<double>> marginal;
    std::map<int, double> state_count;
    for (const auto& o : obs) {
        auto& m = marginal[o.from_state];
        if (m.empty()) m.assign(n_classes, 0.0);
        m[o.exposure_class] += 1.0;
        state_count[o.from_state] += 1.0;
    }
    for (auto& [st, m] : marginal)
        for (double& v : m) v /= state_count[st];

    // Propensity models: pooled with state indicators, or one per state.
    std::map<int, MultinomialFit> per_state_fits;
    MultinomialFit pooled;
    std::vector<int> state_list(states.begin(), states.end());
    const Eigen::Index n_conf = static_cast<Eigen::Index>(confounders.size());

    auto design_row = [&](const StateObs& o, bool pooled_model) {
        Eigen::Index extra = pooled_model ? static_cast<Eigen::Index>(state_list.size()) - 1 : 0;
        Eigen::VectorXd x(1 + n_conf + extra);
        x[0] = 1.0;
        x.segment(1, n_conf) = o.confounders;
        for (Eigen::Index j = 0; j < extra; ++j)
            x[1 + n_conf + j] = (o.from_state == state_list[static_cast<std::size_t>(j) + 1]) ? 1.0 : 0.0;
        return x;
    };

    if (opts.per_state) {
        for (int st : state_list) {
            std::vector<int> cls;
            std::vector<Eigen::VectorXd> rows;
            for (const auto& o : obs)
                if (o.from_state == st) {
                    cls.push_back(o.exposure_class);
                    rows.push_back(design_row(o, false));
                }
            Eigen::MatrixXd X(rows.size(), 1 + n_conf);
            for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i];
            per_state_fits[st] = fit_multinomial_logit(X, cls, n_classes);
        }
    } else {
        std::vector<int> cls;
        Eigen::MatrixXd X(obs.size(), 1 + n_conf + static_cast<Eigen::Index>(state_list.size()) - 1);
        for (std::size_t i = 0; i < obs.size(); ++i) {
            X.row(static_cast<Eigen::Index>(i)) = design_row(obs[i], true);
            cls.push_back(obs[i].exposure_class);
        }
        pooled = fit_multinomial_logit(X, cls, n_classes);
    }

    WeightTable table;
    std::size_t extreme = 0;
    for (const auto& o : obs) {
        const MultinomialFit& fit = opts.per_state ? per_state_fits[o.from_state] : pooled;
        Eigen::VectorXd prob = fit.probabilities(design_row(o, !opts.per_state));
        double propensity = prob[o.exposure_class];
        if (propensity < opts.extreme_propensity) {
            ++extreme;
            propensity = opts.extreme_propensity;
        }
        WeightTable::Entry e;
        e.subject_id = dataset.subject_ids()[o.subject];
        e.from_state = o.from_state;
        e.weight = marginal[o.from_state][o.exposure_class] / propensity;
        table.entries.push_back(std::move(e));
    }
    (void)extreme;

    // Cap at the configured quantile.
    std::vector<double> ws;
    for (const auto& e : table.entries) ws.push_back(e.weight);
    double cap = quantile(ws, opts.cap_quantile);
    for (auto& e : table.entries) e.weight = std::min(e.weight, cap);
    return table;
}

std::vector<std::pair<int, double>> WeightTable::state_means() const {
    std::map<int, std::pair<double, double>> acc;
    for (const auto& e : entries) {
        acc[e.from_state].first += e.weight;
        acc[e.from_state].second += 1.0;
    }
    std::vector<std::pair<int, double>> out;
    for (const auto& [st, sums] : acc) out.emplace_back(st, sums.first / sums.second);
    return out;
}

void WeightTable::write_csv(const std::string& path) const {
    CsvTable t;
    t.header = {"subject_id", "from_state", "weight"};
    for (const auto& e : entries)
        t.rows.push_back({e.subject_id, std::to_string(e.from_state), format_double(e.weight)});
    msmpam::write_csv(path, t);
}

WeightTable WeightTable::read_csv(const std::string& path) {
    CsvTable t = msmpam::read_csv(path);
    int c_id = t.require_column("subject_id");
    int c_st = t.require_column("from_state");
    int c_w = t.require_column("weight");
    WeightTable out;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        out.entries.push_back({t.rows[i][c_id], static_cast<int>(parse_long(t.rows[i][c_st], i + 2)),
                               parse_double(t.rows[i][c_w], i + 2)});
    return out;
}

Eigen::VectorXd weights_for_ped(const WeightTable& table, const PedDataset& ped) {
    std::map<std::pair<std::string, int>, double> lookup;
    for (const auto& e : table.entries) lookup[{e.subject_id, e.from_state}] = e.weight;
    const auto& subj = ped.frame.cat("subject_id");
    const auto& subj_levels = ped.frame.col("subject_id").levels;
    const auto& trans = ped.frame.cat("transition");
    Eigen::VectorXd w(ped.n_rows());
    for (std::size_t i = 0; i < ped.n_rows(); ++i) {
        auto it = lookup.find({subj_levels[subj[i]], ped.diagram.from_state(trans[i])});
        if (it == lookup.end())
            fail_data("MissingColumn", "no weight for subject '" + subj_levels[subj[i]] + "', state " +
                                           std::to_string(ped.diagram.from_state(trans[i])));
        w[static_cast<Eigen::Index>(i)] = it->second;
    }
    return w;
}

}  // namespace msmpam
