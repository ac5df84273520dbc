#include "msmpam/fit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "msmpam/error.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

using nlohmann::json;

namespace {

constexpr double kEtaMax = 32.0;  // exp(32) ~ 8e13 keeps mu finite in double

double poisson_deviance(const AssembledDesign& d, const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        double yi = d.y[i], w = d.prior_weights[i];
        double term = (yi > 0.0) ? yi * std::log(yi / mu[i]) : 0.0;
        dev += 2.0 * w * (term - (yi - mu[i]));
    }
    return dev;
}

// mu = exp(eta + offset) with overflow guard.
Eigen::VectorXd mean_from_eta(const AssembledDesign& d, const Eigen::VectorXd& eta) {
    Eigen::VectorXd mu(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        double e = eta[i] + d.offset[i];
        if (!std::isfinite(e)) fail_numeric("NonFiniteLinearPredictor", "eta is not finite");
        mu[i] = std::exp(std::min(e, kEtaMax));
    }
    return mu;
}

// Accumulates X'WX (raw, lower triangle) and X'W ztilde in one sparse pass.
void accumulate_normal_equations(const AssembledDesign& d, const Eigen::VectorXd& mu,
                                 const Eigen::VectorXd& eta, Eigen::MatrixXd& gram_raw,
                                 Eigen::VectorXd& b_raw) {
    gram_raw.setZero();
    b_raw.setZero();
    const int p = d.p_raw;
    double* g = gram_raw.data();
    const std::size_t n = d.n_rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = d.prior_weights[i] * mu[i];
        if (wi == 0.0) continue;
        const double zi = eta[i] + (d.y[i] - mu[i]) / mu[i];  // working response (offset removed)
        const double wz = wi * zi;
        const int lo = d.row_ptr[i], hi = d.row_ptr[i + 1];
        for (int a = lo; a < hi; ++a) {
            const int ca = d.col_idx[a];
            const double va = d.values[a] * wi;
            b_raw[ca] += d.values[a] * wz;
            double* col = g + static_cast<std::ptrdiff_t>(ca);
            for (int c = lo; c <= a; ++c) col[static_cast<std::ptrdiff_t>(d.col_idx[c]) * p] += va * d.values[c];
        }
    }
    // The pass fills the lower triangle (row index ca >= col index).
    gram_raw = gram_raw.selfadjointView<Eigen::Lower>();
}

Eigen::VectorXd score_raw(const AssembledDesign& d, const Eigen::VectorXd& mu) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(d.p_raw);
    const std::size_t n = d.n_rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = d.prior_weights[i] * (d.y[i] - mu[i]);
        if (r == 0.0) continue;
        for (int a = d.row_ptr[i]; a < d.row_ptr[i + 1]; ++a) s[d.col_idx[a]] += d.values[a] * r;
    }
    return s;
}

Eigen::VectorXd default_start(const AssembledDesign& d) {
    double events = 0.0, exposure = 0.0;
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        events += d.prior_weights[i] * d.y[i];
        exposure += d.prior_weights[i] * std::exp(d.offset[i]);
    }
    double level = std::log(std::max(events, 0.5) / exposure);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.p);
    for (const auto& b : d.blocks)
        if (b.kind == DesignBlock::Kind::Intercepts)
            beta.segment(b.col_offset, b.n_cols).setConstant(level);
    return beta;
}

}  // namespace

PirlsFit fit_pirls(const AssembledDesign& design, const Eigen::VectorXd& lambdas, const FitControl& control,
                   const Eigen::VectorXd* beta_start) {
    if (lambdas.size() != static_cast<Eigen::Index>(design.groups.size()))
        fail_usage("BadArgument", "one lambda per penalty group required");
    for (Eigen::Index g = 0; g < lambdas.size(); ++g)
        if (!(lambdas[g] >= 0.0)) fail_usage("BadArgument", "lambdas must be >= 0");

    const Eigen::MatrixXd S = design.penalty_matrix(lambdas);
    Eigen::VectorXd beta = beta_start ? *beta_start : default_start(design);

    Eigen::VectorXd eta = design.linear_predictor(beta);
    Eigen::VectorXd mu = mean_from_eta(design, eta);
    double pdev = poisson_deviance(design, mu) + beta.dot(S * beta);

    Eigen::MatrixXd gram_raw(design.p_raw, design.p_raw);
    Eigen::VectorXd b_raw(design.p_raw);

    PirlsFit out;
    for (int iter = 1; iter <= control.max_iter; ++iter) {
        accumulate_normal_equations(design, mu, eta, gram_raw, b_raw);
        Eigen::MatrixXd A = design.fold_gram(gram_raw) + S;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        if (ldlt.info() != Eigen::Success) fail_numeric("SolveFailed", "normal equations not factorizable");
        Eigen::VectorXd beta_new = ldlt.solve(design.fold_from_raw(b_raw));

        // Step halving on the penalized deviance.
        Eigen::VectorXd eta_new;
        Eigen::VectorXd mu_new;
        double pdev_new = 0.0;
        int halvings = 0;
        for (;; ++halvings) {
            eta_new = design.linear_predictor(beta_new);
            mu_new = mean_from_eta(design, eta_new);
            pdev_new = poisson_deviance(design, mu_new) + beta_new.dot(S * beta_new);
            if (std::isfinite(pdev_new) && pdev_new <= pdev + 1e-10 * (std::fabs(pdev) + 1.0)) break;
            if (halvings >= control.max_halvings)
                fail_numeric("Divergence", "step halving exhausted at iteration " + std::to_string(iter));
            beta_new = 0.5 * (beta_new + beta);
        }

        double rel_change = std::fabs(pdev - pdev_new) / (std::fabs(pdev_new) + 0.1);
        beta = std::move(beta_new);
        eta = std::move(eta_new);
        mu = std::move(mu_new);
        pdev = pdev_new;
        out.iterations = iter;

        if (rel_change < control.dev_tol) {
            Eigen::VectorXd grad = design.fold_from_raw(score_raw(design, mu)) - S * beta;
            out.grad_max = grad.lpNorm<Eigen::Infinity>();
            if (!control.require_grad || out.grad_max < control.grad_tol) {
                out.beta = beta;
                out.deviance = pdev - beta.dot(S * beta);
                out.penalized_deviance = pdev;
                accumulate_normal_equations(design, mu, eta, gram_raw, b_raw);
                out.xtwx = design.fold_gram(gram_raw);
                out.info = out.xtwx + S;
                return out;
            }
        }
    }
    fail_numeric("Divergence", "PIRLS did not converge in " + std::to_string(control.max_iter) + " iterations");
}

namespace {

struct LambdaEvaluator {
    const AssembledDesign& design;
    FitControl search_control;
    Eigen::VectorXd warm_beta;
    bool have_warm = false;

    double criterion(const Eigen::VectorXd& lambdas) {
        PirlsFit f;
        try {
            f = fit_pirls(design, lambdas, search_control, have_warm ? &warm_beta : nullptr);
        } catch (const Error&) {
            // A bad warm start can strand the search at an extreme lambda;
            // retry cold, and treat a genuinely divergent lambda as terrible.
            have_warm = false;
            try {
                f = fit_pirls(design, lambdas, search_control, nullptr);
            } catch (const Error&) {
                return 1e300;
            }
        }
        warm_beta = f.beta;
        have_warm = true;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(f.info);
        double edf = ldlt.solve(f.xtwx).trace();
        double crit = f.deviance + 2.0 * edf;
        if (!std::isfinite(crit)) fail_numeric("CriterionNonFinite", "smoothing criterion is not finite");
        return crit;
    }
};

}  // namespace

Eigen::VectorXd select_lambdas(const AssembledDesign& design, const LambdaControl& control,
                               const FitControl& fit_control) {
    const int n_groups = static_cast<int>(design.groups.size());
    Eigen::VectorXd loglam = Eigen::VectorXd::Zero(n_groups);
    if (n_groups == 0) return Eigen::VectorXd();

    LambdaEvaluator ev{design, fit_control, {}, false};
    ev.search_control.require_grad = false;
    ev.search_control.dev_tol = std::max(fit_control.dev_tol, 1e-7);

    auto lambdas_of = [&](const Eigen::VectorXd& ll) {
        Eigen::VectorXd lam(n_groups);
        for (int g = 0; g < n_groups; ++g) lam[g] = std::pow(10.0, ll[g]);
        return lam;
    };

    double best = ev.criterion(lambdas_of(loglam));
    const double golden = 0.6180339887498949;

    for (int cycle = 0; cycle < control.max_cycles; ++cycle) {
        double cycle_start = best;
        for (int g = 0; g < n_groups; ++g) {
            auto eval_at = [&](double lg) {
                Eigen::VectorXd ll = loglam;
                ll[g] = lg;
                return ev.criterion(lambdas_of(ll));
            };
            // Bracket: coarse scan on the first cycle, local window after.
            double center, half_width;
            if (cycle == 0) {
                double best_scan = best, best_l = loglam[g];
                for (double cand : {-5.0, -2.5, 0.0, 2.5, 5.0, 7.0}) {
                    double c = eval_at(cand);
                    if (c < best_scan) {
                        best_scan = c;
                        best_l = cand;
                    }
                }
                center = best_l;
                half_width = 3.0;
            } else {
                center = loglam[g];
                half_width = 1.25;
            }
            double a = std::max(control.log10_lo, center - half_width);
            double b = std::min(control.log10_hi, center + half_width);
            double x1 = b - golden * (b - a), x2 = a + golden * (b - a);
            double f1 = eval_at(x1), f2 = eval_at(x2);
            while (b - a > control.golden_tol) {
                if (f1 <= f2) {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - golden * (b - a);
                    f1 = eval_at(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + golden * (b - a);
                    f2 = eval_at(x2);
                }
            }
            double lg = (f1 <= f2) ? x1 : x2;
            double fg = std::min(f1, f2);
            if (fg <= best) {
                best = fg;
                loglam[g] = lg;
            }
        }
        if (cycle_start - best < control.criterion_tol) break;
    }
    return lambdas_of(loglam);
}

FittedPam fit(const PedDataset& ped, const ModelSpec& spec, const Eigen::VectorXd* weights,
              const LambdaControl& lambda_control, const FitControl& fit_control) {
    AssembledDesign design = assemble_design(ped, spec, weights);
    Eigen::VectorXd lambdas = select_lambdas(design, lambda_control, fit_control);
    PirlsFit pf = fit_pirls(design, lambdas, fit_control);

    FittedPam out;
    out.blocks = std::move(design.blocks);
    out.groups = std::move(design.groups);
    out.transition_levels = ped.frame.col("transition").levels;
    out.p = design.p;
    out.p_raw = design.p_raw;
    out.beta = pf.beta;
    out.lambdas = lambdas;
    out.deviance = pf.deviance;
    out.grad_max = pf.grad_max;
    out.pirls_iterations = pf.iterations;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(pf.info);
    out.V = ldlt.solve(Eigen::MatrixXd::Identity(out.p, out.p));
    Eigen::MatrixXd H = ldlt.solve(pf.xtwx);  // A^-1 X'WX, diag = per-column edf
    out.edf_total = H.trace();
    out.edf_groups = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.groups.size()));
    for (std::size_t g = 0; g < out.groups.size(); ++g)
        for (int bi : out.groups[g].blocks) {
            const auto& b = out.blocks[bi];
            for (int j = 0; j < b.n_cols; ++j) out.edf_groups[g] += H(b.col_offset + j, b.col_offset + j);
        }
    out.aic = out.deviance + 2.0 * out.edf_total;
    return out;
}

std::vector<CoefRow> coef_table(const FittedPam& fit, const std::string& term) {
    std::vector<CoefRow> rows;
    bool matched = false;
    for (const auto& b : fit.blocks) {
        if (b.kind == DesignBlock::Kind::Smooth) continue;
        if (!term.empty() && b.label != term) continue;
        matched = true;
        for (int j = 0; j < b.n_cols; ++j) {
            CoefRow r;
            r.term = b.label;
            r.label = b.col_labels[j];
            r.estimate = fit.beta[b.col_offset + j];
            r.se = std::sqrt(std::max(0.0, fit.V(b.col_offset + j, b.col_offset + j)));
            r.z = r.se > 0.0 ? r.estimate / r.se : 0.0;
            r.p = 2.0 * (1.0 - normal_cdf(std::fabs(r.z)));
            rows.push_back(std::move(r));
        }
    }
    if (!term.empty() && !matched) fail_usage("TermNotFound", "no term labelled '" + term + "'");
    return rows;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(std::move(row));
    }
    return a;
}

Eigen::MatrixXd matrix_from_json(const json& a) {
    if (a.empty()) return {};
    Eigen::MatrixXd m(a.size(), a[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    return m;
}

}  // namespace

void FittedPam::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    json j;
    j["p"] = p;
    j["p_raw"] = p_raw;
    j["beta"] = vector_to_json(beta);
    j["lambdas"] = vector_to_json(lambdas);
    j["edf_groups"] = vector_to_json(edf_groups);
    j["edf_total"] = edf_total;
    j["deviance"] = deviance;
    j["aic"] = aic;
    j["grad_max"] = grad_max;
    j["pirls_iterations"] = pirls_iterations;
    j["transition_levels"] = transition_levels;
    json jb = json::array();
    for (const auto& b : blocks) {
        json x;
        x["kind"] = b.kind == DesignBlock::Kind::Intercepts ? "intercepts"
                    : b.kind == DesignBlock::Kind::Linear   ? "linear"
                                                            : "smooth";
        x["label"] = b.label;
        x["col_labels"] = b.col_labels;
        x["raw_offset"] = b.raw_offset;
        x["raw_cols"] = b.raw_cols;
        x["col_offset"] = b.col_offset;
        x["n_cols"] = b.n_cols;
        x["x_column"] = b.x_column;
        x["by_column"] = b.by_column;
        x["by_level"] = b.by_level;
        x["by_level_name"] = b.by_level_name;
        x["by_levels"] = b.by_levels;
        x["lambda_group"] = b.lambda_group;
        if (b.kind == DesignBlock::Kind::Smooth) {
            x["knots"] = b.basis.knots();
            x["degree"] = b.basis.degree();
            x["Z"] = matrix_to_json(b.Z);
            x["penalty"] = matrix_to_json(b.penalty);
        }
        jb.push_back(std::move(x));
    }
    j["blocks"] = std::move(jb);
    json jg = json::array();
    for (const auto& g : groups) jg.push_back({{"label", g.label}, {"blocks", g.blocks}});
    j["groups"] = std::move(jg);

    std::ofstream out(dir + "/model.json");
    if (!out) fail_data("FileNotWritable", "cannot write '" + dir + "/model.json'");
    out << j.dump(2) << "\n";

    std::ofstream vb(dir + "/V.bin", std::ios::binary);
    if (!vb) fail_data("FileNotWritable", "cannot write '" + dir + "/V.bin'");
    std::int64_t dims[2] = {V.rows(), V.cols()};
    vb.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    vb.write(reinterpret_cast<const char*>(V.data()), static_cast<std::streamsize>(sizeof(double) * V.size()));
}

FittedPam FittedPam::load(const std::string& dir) {
    std::ifstream in(dir + "/model.json");
    if (!in) fail_data("FileNotFound", "cannot open '" + dir + "/model.json'");
    json j = json::parse(in);

    FittedPam f;
    f.p = j.at("p").get<int>();
    f.p_raw = j.at("p_raw").get<int>();
    f.beta = vector_from_json(j.at("beta"));
    f.lambdas = vector_from_json(j.at("lambdas"));
    f.edf_groups = vector_from_json(j.at("edf_groups"));
    f.edf_total = j.at("edf_total").get<double>();
    f.deviance = j.at("deviance").get<double>();
    f.aic = j.at("aic").get<double>();
    f.grad_max = j.at("grad_max").get<double>();
    f.pirls_iterations = j.at("pirls_iterations").get<int>();
    f.transition_levels = j.at("transition_levels").get<std::vector<std::string>>();
    for (const auto& x : j.at("blocks")) {
        DesignBlock b;
        std::string kind = x.at("kind").get<std::string>();
        b.kind = kind == "intercepts" ? DesignBlock::Kind::Intercepts
                 : kind == "linear"   ? DesignBlock::Kind::Linear
                                      : DesignBlock::Kind::Smooth;
        b.label = x.at("label").get<std::string>();
        b.col_labels = x.at("col_labels").get<std::vector<std::string>>();
        b.raw_offset = x.at("raw_offset").get<int>();
        b.raw_cols = x.at("raw_cols").get<int>();
        b.col_offset = x.at("col_offset").get<int>();
        b.n_cols = x.at("n_cols").get<int>();
        b.x_column = x.at("x_column").get<std::string>();
        b.by_column = x.at("by_column").get<std::string>();
        b.by_level = x.at("by_level").get<int>();
        b.by_level_name = x.at("by_level_name").get<std::string>();
        b.by_levels = x.at("by_levels").get<std::vector<std::string>>();
        b.lambda_group = x.at("lambda_group").get<int>();
        if (b.kind == DesignBlock::Kind::Smooth) {
            b.basis = BSplineBasis(x.at("knots").get<std::vector<double>>(), x.at("degree").get<int>());
            b.Z = matrix_from_json(x.at("Z"));
            b.penalty = matrix_from_json(x.at("penalty"));
        }
        f.blocks.push_back(std::move(b));
    }
    for (const auto& g : j.at("groups"))
        f.groups.push_back({g.at("label").get<std::string>(), g.at("blocks").get<std::vector<int>>()});

    std::ifstream vb(dir + "/V.bin", std::ios::binary);
    if (!vb) fail_data("FileNotFound", "cannot open '" + dir + "/V.bin'");
    std::int64_t dims[2];
    vb.read(reinterpret_cast<char*>(dims), sizeof(dims));
    f.V.resize(dims[0], dims[1]);
    vb.read(reinterpret_cast<char*>(f.V.data()), static_cast<std::streamsize>(sizeof(double) * f.V.size()));
    if (!vb) fail_data("ParseError", "truncated V.bin");
    return f;
}

}  // namespace msmpam
