#include "msmpam/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "msmpam/baselines.hpp"
#include "msmpam/csv.hpp"
#include "msmpam/error.hpp"
#include "msmpam/fit.hpp"
#include "msmpam/model.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/predict.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config (de)serialization

namespace {

json model_to_json(const StudyModel& m) {
    json j;
    j["name"] = m.name;
    j["type"] = m.type == StudyModel::Type::Pam         ? "pam"
                : m.type == StudyModel::Type::WeibullAft ? "weibull_aft"
                                                         : "nelson_aalen";
    j["form"] = m.form == StudyModel::Form::Ssts ? "ssts" : "mts";
    j["smooth_mode"] = m.smooth_mode == SmoothSpec::Mode::Ps ? "ps" : "fs";
    j["covariates"] = m.covariates;
    j["k"] = m.k;
    j["estimation_point"] = m.estimation_point;
    return j;
}

StudyModel model_from_json(const json& j) {
    StudyModel m;
    m.name = j.at("name").get<std::string>();
    std::string type = j.value("type", std::string("pam"));
    if (type == "pam")
        m.type = StudyModel::Type::Pam;
    else if (type == "weibull_aft")
        m.type = StudyModel::Type::WeibullAft;
    else if (type == "nelson_aalen")
        m.type = StudyModel::Type::NelsonAalen;
    else
        fail_usage("BadStudyConfig", "unknown model type '" + type + "'");
    m.form = j.value("form", std::string("ssts")) == "mts" ? StudyModel::Form::Mts : StudyModel::Form::Ssts;
    m.smooth_mode =
        j.value("smooth_mode", std::string("ps")) == "fs" ? SmoothSpec::Mode::Fs : SmoothSpec::Mode::Ps;
    m.covariates = j.value("covariates", std::vector<std::string>{});
    m.k = j.value("k", 20);
    m.estimation_point = j.value("estimation_point", std::string("exact"));
    return m;
}

json config_to_json(const StudyConfig& c) {
    json j;
    j["name"] = c.name;
    j["dgp"] = c.dgp;
    if (!c.dgp_json.empty()) j["dgp_json"] = json::parse(c.dgp_json);
    json models = json::array();
    for (const auto& m : c.models) models.push_back(model_to_json(m));
    j["models"] = models;
    j["n"] = c.n;
    j["runs"] = c.runs;
    j["seed"] = c.seed;
    j["grid"] = {{"t_min", c.t_min}, {"t_max", c.t_max}, {"t_step", c.t_step}, {"entry_step", c.entry_step}};
    j["quantities"] = c.quantities;
    if (!c.ic_mechanism.empty()) j["ic_mechanism"] = c.ic_mechanism;
    j["cut_intervals"] = c.cut_intervals;
    j["n_draws"] = c.n_draws;
    j["dt"] = c.dt;
    j["threads"] = c.threads;
    j["track_fixed_effects"] = c.track_fixed_effects;
    j["correlation"] = c.correlation;
    return j;
}

StudyConfig config_from_json(const json& j) {
    StudyConfig c;
    c.name = j.value("name", std::string("study"));
    c.dgp = j.value("dgp", std::string());
    if (j.contains("dgp_json")) c.dgp_json = j.at("dgp_json").dump();
    for (const auto& jm : j.at("models")) c.models.push_back(model_from_json(jm));
    c.n = j.value("n", 5000u);
    c.runs = j.value("runs", 100);
    c.seed = j.value("seed", 1u);
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        c.t_min = g.value("t_min", 0.1);
        c.t_max = g.value("t_max", 10.0);
        c.t_step = g.value("t_step", 0.1);
        c.entry_step = g.value("entry_step", 0.5);
    }
    c.quantities = j.value("quantities", std::vector<std::string>{});
    c.ic_mechanism = j.value("ic_mechanism", std::string());
    c.cut_intervals = j.value("cut_intervals", 60);
    c.n_draws = j.value("n_draws", 200);
    c.dt = j.value("dt", 0.01);
    c.threads = j.value("threads", 0);
    c.track_fixed_effects = j.value("track_fixed_effects", std::vector<std::string>{});
    c.correlation = j.value("correlation", std::vector<std::string>{});
    return c;
}

}  // namespace

StudyConfig StudyConfig::from_json_string(const std::string& text) { return config_from_json(json::parse(text)); }

StudyConfig StudyConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_data("FileNotFound", "cannot open '" + path + "'");
    return config_from_json(json::parse(in));
}

std::string StudyConfig::to_json_string() const { return config_to_json(*this).dump(2); }

StudyConfig builtin_study_config(const std::string& name) {
    StudyConfig c;
    c.name = name;
    if (name == "tableA2_small") {
        c.dgp = "ssts_tableA1";
        c.models = {{"ssts_ps", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {}, 20,
                     "exact"},
                    {"mts_ps", StudyModel::Type::Pam, StudyModel::Form::Mts, SmoothSpec::Mode::Ps, {}, 20,
                     "exact"}};
        c.runs = 100;
        c.seed = 171;
        c.quantities = {"loghazard", "cumhaz"};
    } else if (name == "tableA2_fe_ssts_small" || name == "tableA2_fe_mts_small") {
        c.dgp = name == "tableA2_fe_ssts_small" ? "ssts_tableA1_x1" : "mts_tableA1_x1";
        c.models = {{"ssts_ps", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {"x1"}, 20,
                     "exact"},
                    {"mts_ps", StudyModel::Type::Pam, StudyModel::Form::Mts, SmoothSpec::Mode::Ps, {"x1"}, 20,
                     "exact"}};
        c.runs = 100;
        c.seed = 172;
        c.track_fixed_effects = {"x1"};
    } else if (name == "ieb_large_nn_small") {
        c.dgp = "ieb_large_nn";
        c.models = {{"ssts_x1only", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {"x1"},
                     20, "exact"},
                    {"ssts_full", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps,
                     {"x1", "x2"}, 20, "exact"}};
        c.runs = 100;
        c.seed = 173;
        c.track_fixed_effects = {"x1"};
        c.correlation = {"x1", "x2"};
    } else if (name == "ic_fixed_effects_small") {
        c.dgp = "ic_pexp_x1";
        c.ic_mechanism = "beta";
        c.models = {{"pam_exact", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {"x1"},
                     20, "exact"},
                    {"pam_mid", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {"x1"}, 20,
                     "mid"},
                    {"pam_end", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {"x1"}, 20,
                     "end"},
                    {"weibull_exact", StudyModel::Type::WeibullAft, StudyModel::Form::Ssts,
                     SmoothSpec::Mode::Ps, {"x1"}, 20, "exact"},
                    {"weibull_adjustment", StudyModel::Type::WeibullAft, StudyModel::Form::Ssts,
                     SmoothSpec::Mode::Ps, {"x1"}, 20, "adjustment"},
                    {"weibull_mid", StudyModel::Type::WeibullAft, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps,
                     {"x1"}, 20, "mid"},
                    {"weibull_end", StudyModel::Type::WeibullAft, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps,
                     {"x1"}, 20, "end"}};
        c.runs = 100;
        c.seed = 174;
        c.cut_intervals = 30;
        c.track_fixed_effects = {"x1"};
    } else if (name == "ic_baseline_small") {
        c.dgp = "ic_pexp";
        c.ic_mechanism = "beta";
        c.models = {{"pam_exact", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {}, 20,
                     "exact"},
                    {"pam_mid", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {}, 20,
                     "mid"},
                    {"pam_end", StudyModel::Type::Pam, StudyModel::Form::Ssts, SmoothSpec::Mode::Ps, {}, 20,
                     "end"},
                    {"weibull_adjustment", StudyModel::Type::WeibullAft, StudyModel::Form::Ssts,
                     SmoothSpec::Mode::Ps, {}, 20, "adjustment"}};
        c.runs = 100;
        c.seed = 175;
        c.cut_intervals = 30;
        c.quantities = {"loghazard", "cumhaz"};
    } else {
        fail_usage("UnknownStudy", "no built-in study named '" + name + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Grids and truth

namespace {

struct QtyGrid {
    // Per transition: evaluation points (t, entry); entry 0 on the 1-D grid.
    std::vector<std::vector<std::pair<double, double>>> points;
};

bool transprob_supported(const StateDiagram& diagram, int k) {
    return diagram.from_state(k) >= 1 || diagram.n_transitions() == 1;
}

QtyGrid build_grid(const StudyConfig& c, const StateDiagram& diagram, const std::string& quantity) {
    QtyGrid g;
    g.points.resize(diagram.n_transitions());
    std::vector<double> ts;
    for (int i = 0;; ++i) {
        double t = c.t_min + i * c.t_step;
        if (t > c.t_max + 1e-9) break;
        ts.push_back(std::min(t, c.t_max));
    }
    for (int k = 0; k < diagram.n_transitions(); ++k) {
        if (quantity == "transprob" && !transprob_supported(diagram, k)) continue;
        if (diagram.from_state(k) == 0) {
            for (double t : ts) g.points[k].emplace_back(t, 0.0);
        } else {
            for (int j = 1;; ++j) {
                double e = j * c.entry_step;
                if (e > c.t_max + 1e-9) break;
                for (double t : ts) {
                    if (t < e - 1e-9) continue;
                    if (quantity != "loghazard" && t <= e + 1e-9) continue;  // zero-length integral
                    g.points[k].emplace_back(t, e);
                }
            }
        }
    }
    return g;
}

// Truth is evaluated at the zero-covariate profile with the conditioning
// entry time fixed, matching the predictor's estimand.
double truth_loghazard(const DgpSpec& dgp, int k, double t, double entry) {
    std::vector<double> se(dgp.diagram.n_states(), 0.0);
    if (se.size() > 1) se[1] = entry;
    std::vector<double> x(dgp.covariates.size(), 0.0);
    return eval_dgp_loghazard(dgp, k, t, se, x);
}

std::vector<double> truth_cumhaz_group(const DgpSpec& dgp, int k, double s, const std::vector<double>& ts,
                                       double entry) {
    std::vector<double> out(ts.size());
    double H = 0.0, prev = s;
    auto f = [&](double u) { return std::exp(truth_loghazard(dgp, k, u, entry)); };
    for (std::size_t i = 0; i < ts.size(); ++i) {
        H += integrate(f, prev, ts[i], 1e-9);
        prev = ts[i];
        out[i] = H;
    }
    return out;
}

// Kolmogorov forward equations dP/du = P Q(u) under the conditioning
// profile, RK4 on a fine fixed step; independent of the product-integral
// discretization used by the prediction module.
std::vector<Eigen::MatrixXd> truth_transprob_group(const DgpSpec& dgp, double s, const std::vector<double>& ts,
                                                   double entry) {
    const StateDiagram& diagram = dgp.diagram;
    const int S = diagram.n_states();
    auto Q = [&](double u) {
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(S, S);
        for (int k = 0; k < diagram.n_transitions(); ++k) {
            double h = std::exp(truth_loghazard(dgp, k, u, entry));
            q(diagram.from_state(k), diagram.to_state(k)) += h;
            q(diagram.from_state(k), diagram.from_state(k)) -= h;
        }
        return q;
    };
    std::vector<Eigen::MatrixXd> out;
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(S, S);
    double u = s;
    const double h_step = 1e-3;
    for (double t_target : ts) {
        while (u < t_target - 1e-12) {
            double h = std::min(h_step, t_target - u);
            Eigen::MatrixXd k1 = P * Q(u);
            Eigen::MatrixXd k2 = (P + 0.5 * h * k1) * Q(u + 0.5 * h);
            Eigen::MatrixXd k3 = (P + 0.5 * h * k2) * Q(u + 0.5 * h);
            Eigen::MatrixXd k4 = (P + h * k3) * Q(u + h);
            P += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            u += h;
        }
        out.push_back(P);
    }
    return out;
}

struct TruthTables {
    // [quantity][transition][point]
    std::map<std::string, std::vector<std::vector<double>>> values;
};

TruthTables build_truth(const StudyConfig& c, const DgpSpec& dgp,
                        const std::map<std::string, QtyGrid>& grids) {
    TruthTables truth;
    for (const auto& [qty, grid] : grids) {
        auto& per_k = truth.values[qty];
        per_k.resize(grid.points.size());
        for (std::size_t k = 0; k < grid.points.size(); ++k) {
            const auto& pts = grid.points[k];
            per_k[k].resize(pts.size());
            if (qty == "loghazard") {
                for (std::size_t i = 0; i < pts.size(); ++i)
                    per_k[k][i] = truth_loghazard(dgp, static_cast<int>(k), pts[i].first, pts[i].second);
            } else {
                // Group by entry; points are ordered (entry, t).
                std::size_t i = 0;
                while (i < pts.size()) {
                    double e = pts[i].second;
                    std::vector<double> ts;
                    std::size_t j = i;
                    while (j < pts.size() && pts[j].second == e) ts.push_back(pts[j++].first);
                    double s = dgp.diagram.from_state(static_cast<int>(k)) == 0 ? 0.0 : e;
                    if (qty == "cumhaz") {
                        auto H = truth_cumhaz_group(dgp, static_cast<int>(k), s, ts, e);
                        for (std::size_t m = 0; m < ts.size(); ++m) per_k[k][i + m] = H[m];
                    } else {
                        auto P = truth_transprob_group(dgp, s, ts, e);
                        int from = dgp.diagram.from_state(static_cast<int>(k));
                        int to = dgp.diagram.to_state(static_cast<int>(k));
                        for (std::size_t m = 0; m < ts.size(); ++m) per_k[k][i + m] = P[m](from, to);
                    }
                    i += ts.size();
                }
            }
        }
    }
    return truth;
}

// ---------------------------------------------------------------------------
// Per-run evaluation

struct CellEval {
    float est = 0.0f;
    std::uint8_t covered = 0;
};

struct ModelRunData {
    bool ok = false;
    std::string error;
    std::map<std::string, std::vector<std::vector<CellEval>>> cells;  // [qty][k][point]
    std::vector<std::pair<double, double>> fixed;                     // (est, se) per tracked term x transition
};

struct RunData {
    std::vector<ModelRunData> models;
    double cor_state0 = std::numeric_limits<double>::quiet_NaN();
    double cor_state1 = std::numeric_limits<double>::quiet_NaN();
    std::size_t dropped = 0;
};

const Dataset& pick_view(const SimulatedStudy& study, const std::string& estimation_point) {
    if (!study.ic || estimation_point == "exact") return study.ic ? study.ic->exact : study.dataset;
    if (estimation_point == "mid") return study.ic->mid;
    if (estimation_point == "end") return study.ic->end;
    fail_usage("BadStudyConfig", "estimation point '" + estimation_point + "' needs an IC mechanism");
}

std::uint64_t ci_seed(const StudyConfig& c, int run, std::size_t model, int k, int group) {
    return c.seed ^ (0x9e3779b97f4a7c15ULL * (run + 1) + 0x6a09e667f3bcc909ULL * (model + 1) +
                     1000003ULL * (k + 1) + 101ULL * (group + 1));
}

void eval_pam_model(const StudyConfig& c, const StudyModel& m, const DgpSpec& dgp, const Dataset& data,
                    const std::map<std::string, QtyGrid>& grids, const TruthTables& truth, int run,
                    std::size_t model_index, ModelRunData& out) {
    const StateDiagram& diagram = data.diagram();
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = c.cut_intervals;
    CutPoints cuts = make_cuts(data, strat);
    PedDataset ped = transform_to_ped(data, cuts);

    bool with_entry = diagram.final_progression_state() >= 2;
    ModelSpec spec = m.form == StudyModel::Form::Ssts
                         ? make_ssts_spec(diagram, with_entry, m.covariates, m.smooth_mode, m.k)
                         : make_mts_spec(diagram, with_entry, m.covariates, m.smooth_mode, m.k);
    FittedPam fit_result = fit(ped, spec);

    Profile base_profile;
    for (const auto& cov : m.covariates) base_profile.covariates[cov] = 0.0;

    for (const auto& [qty, grid] : grids) {
        auto& cells = out.cells[qty];
        cells.resize(grid.points.size());
        const auto& truth_k = truth.values.at(qty);
        for (int k = 0; k < diagram.n_transitions(); ++k) {
            const auto& pts = grid.points[k];
            cells[k].resize(pts.size());
            if (pts.empty()) continue;
            // Points are grouped by entry value.
            std::size_t i = 0;
            int group = 0;
            while (i < pts.size()) {
                double e = pts[i].second;
                std::vector<double> ts;
                std::size_t j = i;
                while (j < pts.size() && pts[j].second == e) ts.push_back(pts[j++].first);
                Profile profile = base_profile;
                if (diagram.from_state(k) >= 1) profile.state_entry[1] = e;
                if (qty == "loghazard") {
                    Frame frame = prediction_frame(diagram, k, ts, profile);
                    LogHazardPrediction pred = predict_loghazard(fit_result, frame);
                    for (std::size_t mi = 0; mi < ts.size(); ++mi) {
                        double tr = truth_k[k][i + mi];
                        cells[k][i + mi] = {static_cast<float>(pred.value[mi]),
                                            static_cast<std::uint8_t>(pred.lo[mi] <= tr && tr <= pred.hi[mi])};
                    }
                } else if (qty == "cumhaz") {
                    CumHazOptions opts;
                    opts.dt = c.dt;
                    opts.n_draws = c.n_draws;
                    opts.seed = ci_seed(c, run, model_index, k, group);
                    double s = diagram.from_state(k) == 0 ? 0.0 : e;
                    CumHazResult res = cumulative_hazard(fit_result, diagram, k, s, ts, profile, opts);
                    for (std::size_t mi = 0; mi < ts.size(); ++mi) {
                        double tr = truth_k[k][i + mi];
                        cells[k][i + mi] = {static_cast<float>(res.est[mi]),
                                            static_cast<std::uint8_t>(res.lo[mi] <= tr && tr <= res.hi[mi])};
                    }
                } else if (qty == "transprob") {
                    TransProbOptions opts;
                    opts.dt = c.dt;
                    opts.n_draws = c.n_draws;
                    opts.seed = ci_seed(c, run, model_index, k, group);
                    double s = diagram.from_state(k) == 0 ? 0.0 : e;
                    TransProbResult res = transition_matrix(fit_result, diagram, s, ts, profile, opts);
                    int a = diagram.from_state(k), b = diagram.to_state(k);
                    for (std::size_t mi = 0; mi < ts.size(); ++mi) {
                        double tr = truth_k[k][i + mi];
                        cells[k][i + mi] = {static_cast<float>(res.P[mi](a, b)),
                                            static_cast<std::uint8_t>(res.lo[mi](a, b) <= tr &&
                                                                      tr <= res.hi[mi](a, b))};
                    }
                }
                i += ts.size();
                ++group;
            }
        }
    }

    // Tracked fixed effects: one (estimate, se) per term x transition.
    for (const auto& term : c.track_fixed_effects) {
        auto rows = coef_table(fit_result, term + ":transition");
        for (int k = 0; k < diagram.n_transitions(); ++k) {
            const std::string want = term + ":" + diagram.transition_label(k);
            bool found = false;
            for (const auto& r : rows)
                if (r.label == want) {
                    out.fixed.emplace_back(r.estimate, r.se);
                    found = true;
                    break;
                }
            if (!found) fail_usage("TermNotFound", "fixed effect '" + want + "' not in the model");
        }
    }
    out.ok = true;
}

std::vector<SurvObs> single_event_obs(const Dataset& data) {
    if (data.diagram().n_transitions() != 1)
        fail_usage("BadStudyConfig", "comparator models support single-event diagrams only");
    std::vector<SurvObs> obs;
    for (const auto& r : data.records())
        obs.push_back(SurvObs::exact(r.t_exit, r.to_state != kCensored, r.numeric_covariates));
    return obs;
}

void eval_weibull_model(const StudyConfig& c, const StudyModel& m, const SimulatedStudy& study,
                        const std::map<std::string, QtyGrid>& grids, const TruthTables& truth,
                        ModelRunData& out) {
    WeibullFit wfit;
    if (m.estimation_point == "adjustment") {
        if (!study.ic) fail_usage("BadStudyConfig", "adjustment estimation point needs an IC mechanism");
        std::vector<SurvObs> obs;
        for (const auto& iv : study.ic->intervals) {
            if (iv.event)
                obs.push_back(iv.L < iv.R ? SurvObs::interval(iv.L, iv.R, iv.covariates)
                                          : SurvObs::exact(iv.R, true, iv.covariates));
            else
                obs.push_back(SurvObs::censored(iv.R, iv.covariates));
        }
        wfit = fit_weibull_aft(obs, WeibullLikelihood::Interval);
    } else {
        wfit = fit_weibull_aft(single_event_obs(pick_view(study, m.estimation_point)),
                               WeibullLikelihood::Exact);
    }

    std::vector<double> x0(m.covariates.size(), 0.0);
    for (const auto& [qty, grid] : grids) {
        if (qty == "transprob") continue;
        auto& cells = out.cells[qty];
        cells.resize(grid.points.size());
        const auto& pts = grid.points[0];
        cells[0].resize(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double t = pts[i].first;
            double tr = truth.values.at(qty)[0][i];
            if (qty == "loghazard") {
                double lh = wfit.loghazard(t, x0);
                double se = wfit.loghazard_se(t, x0);
                cells[0][i] = {static_cast<float>(lh),
                               static_cast<std::uint8_t>(lh - 1.96 * se <= tr && tr <= lh + 1.96 * se)};
            } else {
                // log H = shape log t + beta0 (+ beta x); delta-method CI.
                double logH = wfit.shape * std::log(t) + wfit.log_hazard_intercept;
                Eigen::VectorXd grad = Eigen::VectorXd::Zero(wfit.covariance.rows());
                grad[0] = wfit.shape * std::log(t);
                grad[1] = 1.0;
                double se = std::sqrt(std::max(0.0, grad.dot(wfit.covariance * grad)));
                double H = std::exp(logH);
                cells[0][i] = {static_cast<float>(H),
                               static_cast<std::uint8_t>(std::exp(logH - 1.96 * se) <= tr &&
                                                         tr <= std::exp(logH + 1.96 * se))};
            }
        }
    }
    for (std::size_t ti = 0; ti < c.track_fixed_effects.size(); ++ti) {
        if (wfit.betas.size() == 0) fail_usage("TermNotFound", "AFT model has no covariates");
        double se = std::sqrt(std::max(0.0, wfit.covariance(2, 2)));
        out.fixed.emplace_back(wfit.betas[0], se);
    }
    out.ok = true;
}

void eval_na_model(const StudyModel& m, const SimulatedStudy& study,
                   const std::map<std::string, QtyGrid>& grids, const TruthTables& truth, ModelRunData& out) {
    const Dataset& data = pick_view(study, m.estimation_point);
    if (data.diagram().n_transitions() != 1)
        fail_usage("BadStudyConfig", "nelson_aalen supports single-event diagrams only");
    std::vector<double> time;
    std::vector<int> status;
    for (const auto& r : data.records()) {
        time.push_back(r.t_exit);
        status.push_back(r.to_state != kCensored ? 1 : 0);
    }
    NelsonAalen na = nelson_aalen(time, status);
    auto it = grids.find("cumhaz");
    if (it == grids.end()) {
        out.ok = true;
        return;
    }
    const auto& pts = it->second.points[0];
    auto& cells = out.cells["cumhaz"];
    cells.resize(1);
    cells[0].resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double H = na.at(pts[i].first);
        double se = std::sqrt(na.variance_at(pts[i].first));
        double tr = truth.values.at("cumhaz")[0][i];
        cells[0][i] = {static_cast<float>(H),
                       static_cast<std::uint8_t>(H - 1.96 * se <= tr && tr <= H + 1.96 * se)};
    }
    out.ok = true;
}

}  // namespace

const OverallRow& StudyResult::find_overall(const std::string& model, const std::string& quantity,
                                            int transition) const {
    for (const auto& r : overall)
        if (r.model == model && r.quantity == quantity && r.transition == transition) return r;
    fail_usage("NotFound", "no overall row for " + model + "/" + quantity + "/k=" + std::to_string(transition));
}

const FixedEffectRow& StudyResult::find_fixed_effect(const std::string& model, const std::string& term,
                                                     int transition) const {
    for (const auto& r : fixed_effects)
        if (r.model == model && r.term == term && r.transition == transition) return r;
    fail_usage("NotFound", "no fixed-effect row for " + model + "/" + term);
}

CoverageTableRow coverage_row(int covered, int total) {
    CoverageTableRow row;
    row.covered = covered;
    row.total = total;
    row.point_estimate = total > 0 ? static_cast<double>(covered) / total : 0.0;
    auto [lo, hi] = clopper_pearson(covered, std::max(total, 1));
    row.cp_lo = lo;
    row.cp_hi = hi;
    return row;
}

StudyResult run_study(const StudyConfig& config, const std::string& out_dir) {
    auto t_start = std::chrono::steady_clock::now();
    DgpSpec dgp = config.dgp_json.empty() ? make_dgp(config.dgp) : dgp_from_json_string(config.dgp_json);
    if (dgp.diagram.final_progression_state() > 2)
        fail_usage("BadStudyConfig", "the replication harness supports diagrams with at most one interim state");

    std::optional<IcMechanism> mech;
    if (!config.ic_mechanism.empty()) mech = IcMechanism::named(config.ic_mechanism);

    std::map<std::string, QtyGrid> grids;
    for (const auto& qty : config.quantities) {
        if (qty != "loghazard" && qty != "cumhaz" && qty != "transprob")
            fail_usage("BadStudyConfig", "unknown quantity '" + qty + "'");
        grids[qty] = build_grid(config, dgp.diagram, qty);
    }
    TruthTables truth = build_truth(config, dgp, grids);

    // Fixed-effect truth per (term, transition).
    std::vector<double> fixed_truth;
    for (const auto& term : config.track_fixed_effects) {
        int ci = -1;
        for (std::size_t c = 0; c < dgp.covariates.size(); ++c)
            if (dgp.covariates[c].name == term) ci = static_cast<int>(c);
        if (ci < 0) fail_usage("TermNotFound", "tracked term '" + term + "' is not a DGP covariate");
        for (int k = 0; k < dgp.diagram.n_transitions(); ++k) {
            const auto& bx = dgp.transitions[k].beta_x;
            fixed_truth.push_back(ci < static_cast<int>(bx.size()) ? bx[ci] : 0.0);
        }
    }

    // Correlation covariate indices.
    int cor_x1 = -1, cor_x2 = -1;
    if (config.correlation.size() == 2) {
        for (std::size_t c = 0; c < dgp.covariates.size(); ++c) {
            if (dgp.covariates[c].name == config.correlation[0]) cor_x1 = static_cast<int>(c);
            if (dgp.covariates[c].name == config.correlation[1]) cor_x2 = static_cast<int>(c);
        }
        if (cor_x1 < 0 || cor_x2 < 0) fail_usage("TermNotFound", "correlation covariates not in the DGP");
    }

    const int runs = config.runs;
    std::vector<RunData> run_data(runs);
    std::atomic<int> next_run{0};
    auto worker = [&]() {
        for (;;) {
            int r = next_run.fetch_add(1);
            if (r >= runs) break;
            RunData& rd = run_data[r];
            SimulatedStudy study;
            try {
                study = generate_study(dgp, config.n, config.seed, static_cast<std::uint64_t>(r),
                                       mech ? &*mech : nullptr);
            } catch (const std::exception& ex) {
                rd.models.assign(config.models.size(), ModelRunData{});
                for (auto& mm : rd.models) mm.error = std::string("simulation: ") + ex.what();
                continue;
            }
            rd.dropped = study.dropped_zero_length;

            if (cor_x1 >= 0) {
                std::vector<double> x1_0, x2_0, x1_1, x2_1;
                for (std::size_t s = 0; s < study.dataset.subject_ids().size(); ++s) {
                    const auto& eps = study.dataset.subject_episodes()[s];
                    const auto& first = study.dataset.records()[eps.front()];
                    x1_0.push_back(first.numeric_covariates[cor_x1]);
                    x2_0.push_back(first.numeric_covariates[cor_x2]);
                    bool in_state1 = false;
                    for (std::size_t idx : eps)
                        if (study.dataset.records()[idx].from_state == 1) in_state1 = true;
                    if (in_state1) {
                        x1_1.push_back(first.numeric_covariates[cor_x1]);
                        x2_1.push_back(first.numeric_covariates[cor_x2]);
                    }
                }
                rd.cor_state0 = pearson_correlation(x1_0, x2_0);
                if (x1_1.size() >= 3) rd.cor_state1 = pearson_correlation(x1_1, x2_1);
            }

            rd.models.resize(config.models.size());
            for (std::size_t mi = 0; mi < config.models.size(); ++mi) {
                const StudyModel& m = config.models[mi];
                ModelRunData& md = rd.models[mi];
                try {
                    switch (m.type) {
                        case StudyModel::Type::Pam:
                            eval_pam_model(config, m, dgp, pick_view(study, m.estimation_point), grids, truth,
                                           r, mi, md);
                            break;
                        case StudyModel::Type::WeibullAft:
                            eval_weibull_model(config, m, study, grids, truth, md);
                            break;
                        case StudyModel::Type::NelsonAalen:
                            eval_na_model(m, study, grids, truth, md);
                            break;
                    }
                } catch (const std::exception& ex) {
                    md.ok = false;
                    md.error = ex.what();
                    md.cells.clear();
                }
            }
        }
    };

    int n_threads = config.threads > 0 ? config.threads
                                       : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<int>(n_threads, runs);
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    // ------------------------------------------------------------------
    // Aggregation, in run-index order so output is thread-count invariant.
    StudyResult result;
    result.config = config;
    std::set<std::string> failure_models;
    for (int r = 0; r < runs; ++r) {
        result.dropped_zero_length += run_data[r].dropped;
        for (std::size_t mi = 0; mi < config.models.size(); ++mi)
            if (!run_data[r].models.empty() && !run_data[r].models[mi].ok) {
                result.failures.push_back("run " + std::to_string(r) + " model " + config.models[mi].name +
                                          ": " + run_data[r].models[mi].error);
            }
    }
    {
        std::set<int> failed;
        for (int r = 0; r < runs; ++r)
            for (const auto& md : run_data[r].models)
                if (!md.ok) failed.insert(r);
        result.failed_runs = static_cast<int>(failed.size());
    }

    for (std::size_t mi = 0; mi < config.models.size(); ++mi) {
        const StudyModel& m = config.models[mi];
        for (const auto& [qty, grid] : grids) {
            for (std::size_t k = 0; k < grid.points.size(); ++k) {
                const auto& pts = grid.points[k];
                if (pts.empty()) continue;
                bool model_has_cells = false;
                for (int r = 0; r < runs && !model_has_cells; ++r)
                    if (run_data[r].models[mi].ok && run_data[r].models[mi].cells.count(qty) &&
                        !run_data[r].models[mi].cells.at(qty)[k].empty())
                        model_has_cells = true;
                if (!model_has_cells) continue;

                double sum_cov = 0.0, sum_bias = 0.0, sum_rmse = 0.0;
                int pooled_cov = 0, pooled_total = 0;
                double sum_cp_lo = 0.0, sum_cp_hi = 0.0;
                for (std::size_t i = 0; i < pts.size(); ++i) {
                    int covered = 0, total = 0;
                    double bias = 0.0, mse = 0.0;
                    double tr = truth.values.at(qty)[k][i];
                    for (int r = 0; r < runs; ++r) {
                        const ModelRunData& md = run_data[r].models[mi];
                        if (!md.ok || !md.cells.count(qty)) continue;
                        const CellEval& cell = md.cells.at(qty)[k][i];
                        ++total;
                        covered += cell.covered;
                        double err = static_cast<double>(cell.est) - tr;
                        bias += err;
                        mse += err * err;
                    }
                    if (total == 0) continue;
                    PointRow row;
                    row.model = m.name;
                    row.quantity = qty;
                    row.transition = static_cast<int>(k);
                    row.t = pts[i].first;
                    row.t_entry = pts[i].second;
                    row.covered = covered;
                    row.total = total;
                    row.coverage = static_cast<double>(covered) / total;
                    auto [lo, hi] = clopper_pearson(covered, total);
                    row.cp_lo = lo;
                    row.cp_hi = hi;
                    row.bias = bias / total;
                    row.rmse = std::sqrt(mse / total);
                    result.pointwise.push_back(row);
                    sum_cov += row.coverage;
                    sum_bias += row.bias;
                    sum_rmse += row.rmse;
                    sum_cp_lo += row.cp_lo;
                    sum_cp_hi += row.cp_hi;
                    pooled_cov += covered;
                    pooled_total += total;
                }
                if (pooled_total == 0) continue;
                OverallRow ov;
                ov.model = m.name;
                ov.quantity = qty;
                ov.transition = static_cast<int>(k);
                ov.points = static_cast<int>(pts.size());
                ov.runs_used = pooled_total / static_cast<int>(pts.size());
                ov.coverage = sum_cov / pts.size();
                ov.cp_lo_avg = sum_cp_lo / pts.size();
                ov.cp_hi_avg = sum_cp_hi / pts.size();
                auto [plo, phi] = clopper_pearson(pooled_cov, pooled_total);
                ov.cp_lo_pooled = plo;
                ov.cp_hi_pooled = phi;
                ov.bias = sum_bias / pts.size();
                ov.rmse = sum_rmse / pts.size();
                result.overall.push_back(ov);
            }
        }

        // Fixed effects.
        std::size_t fe_idx = 0;
        for (const auto& term : config.track_fixed_effects) {
            for (int k = 0; k < dgp.diagram.n_transitions(); ++k, ++fe_idx) {
                std::vector<double> ests;
                int covered = 0, total = 0;
                double tr = fixed_truth[fe_idx];
                for (int r = 0; r < runs; ++r) {
                    const ModelRunData& md = run_data[r].models[mi];
                    if (!md.ok || fe_idx >= md.fixed.size()) continue;
                    auto [est, se] = md.fixed[fe_idx];
                    ests.push_back(est);
                    ++total;
                    if (est - 1.96 * se <= tr && tr <= est + 1.96 * se) ++covered;
                }
                if (total == 0) continue;
                FixedEffectRow row;
                row.model = m.name;
                row.term = term;
                row.transition = k;
                row.truth = tr;
                double mean = 0.0;
                for (double e : ests) mean += e;
                row.mean = mean / ests.size();
                row.q25 = quantile(ests, 0.25);
                row.median = quantile(ests, 0.5);
                row.q75 = quantile(ests, 0.75);
                row.covered = covered;
                row.total = total;
                row.coverage = static_cast<double>(covered) / total;
                auto [lo, hi] = clopper_pearson(covered, total);
                row.cp_lo = lo;
                row.cp_hi = hi;
                result.fixed_effects.push_back(row);
            }
        }
    }

    if (cor_x1 >= 0) {
        for (int state = 0; state <= 1; ++state) {
            std::vector<double> rs;
            for (int r = 0; r < runs; ++r) {
                double v = state == 0 ? run_data[r].cor_state0 : run_data[r].cor_state1;
                if (std::isfinite(v)) rs.push_back(v);
            }
            if (rs.empty()) continue;
            CorrelationRow row;
            row.state = state;
            double mean = 0.0;
            for (double v : rs) mean += v;
            row.mean = mean / rs.size();
            row.lo = quantile(rs, 0.025);
            row.hi = quantile(rs, 0.975);
            row.runs = static_cast<int>(rs.size());
            result.correlations.push_back(row);
        }
    }

    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        {
            CsvTable t;
            t.header = {"model", "quantity", "transition", "t",     "t_entry", "covered",
                        "runs",  "coverage", "cp_lo",      "cp_hi", "bias",    "rmse"};
            for (const auto& r : result.pointwise)
                t.rows.push_back({r.model, r.quantity, std::to_string(r.transition), format_double(r.t),
                                  format_double(r.t_entry), std::to_string(r.covered), std::to_string(r.total),
                                  format_double(r.coverage), format_double(r.cp_lo), format_double(r.cp_hi),
                                  format_double(r.bias), format_double(r.rmse)});
            for (const auto& r : result.overall)
                t.rows.push_back({r.model, r.quantity, std::to_string(r.transition), "overall", "",
                                  std::to_string(static_cast<int>(std::lround(r.coverage * r.points * r.runs_used))),
                                  std::to_string(r.runs_used), format_double(r.coverage),
                                  format_double(r.cp_lo_avg), format_double(r.cp_hi_avg), format_double(r.bias),
                                  format_double(r.rmse)});
            write_csv(std::string(out_dir) + "/coverage.csv", t);
        }
        {
            CsvTable t;
            t.header = {"model", "quantity", "transition", "t", "t_entry", "bias", "rmse"};
            for (const auto& r : result.pointwise)
                t.rows.push_back({r.model, r.quantity, std::to_string(r.transition), format_double(r.t),
                                  format_double(r.t_entry), format_double(r.bias), format_double(r.rmse)});
            write_csv(std::string(out_dir) + "/bias_rmse.csv", t);
        }
        {
            CsvTable t;
            t.header = {"model", "term",   "transition", "truth", "mean",     "q25",  "median",
                        "q75",   "covered", "runs",      "coverage", "cp_lo", "cp_hi"};
            for (const auto& r : result.fixed_effects)
                t.rows.push_back({r.model, r.term, std::to_string(r.transition), format_double(r.truth),
                                  format_double(r.mean), format_double(r.q25), format_double(r.median),
                                  format_double(r.q75), std::to_string(r.covered), std::to_string(r.total),
                                  format_double(r.coverage), format_double(r.cp_lo), format_double(r.cp_hi)});
            write_csv(std::string(out_dir) + "/fixed_effects.csv", t);
        }
        {
            CsvTable t;
            t.header = {"state", "mean_r", "lo", "hi", "runs"};
            for (const auto& r : result.correlations)
                t.rows.push_back({std::to_string(r.state), format_double(r.mean), format_double(r.lo),
                                  format_double(r.hi), std::to_string(r.runs)});
            write_csv(std::string(out_dir) + "/correlations.csv", t);
        }
        {
            json meta;
            meta["config"] = json::parse(config.to_json_string());
            std::uint64_t h = 1469598103934665603ULL;
            for (char ch : config.to_json_string()) {
                h ^= static_cast<unsigned char>(ch);
                h *= 1099511628211ULL;
            }
            meta["config_hash"] = h;
            meta["seed"] = config.seed;
            meta["version"] = "msmpam 0.1.0";
            meta["failed_runs"] = result.failed_runs;
            meta["failures"] = result.failures;
            meta["dropped_zero_length_episodes"] = result.dropped_zero_length;
            meta["seconds"] = result.seconds;
            if (mech) {
                meta["ic_mechanism"] = {{"name", mech->name()},
                                        {"visits", {mech->visits_min, mech->visits_max}},
                                        {"beta", {mech->beta_a, mech->beta_b}},
                                        {"jitter", mech->jitter},
                                        {"renewal_gap", {mech->gap_lo, mech->gap_hi}}};
            }
            std::ofstream out(std::string(out_dir) + "/meta.json");
            if (!out) fail_data("FileNotWritable", "cannot write meta.json");
            out << meta.dump(2) << "\n";
        }
    }
    return result;
}

}  // namespace msmpam
