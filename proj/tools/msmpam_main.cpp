// Command-line front end: simulate, transform, fit, predict, weights, study.
// Exit codes: 0 success, 2 usage, 3 data/validation, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "msmpam/csv.hpp"
#include "msmpam/dgp.hpp"
#include "msmpam/error.hpp"
#include "msmpam/fit.hpp"
#include "msmpam/harness.hpp"
#include "msmpam/model.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/predict.hpp"
#include "msmpam/simulate.hpp"
#include "msmpam/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace msmpam;

namespace {

constexpr const char* kVersion = "msmpam 0.1.0";

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

void write_meta(const std::string& dir, const json& config, std::uint64_t seed) {
    json meta;
    meta["config"] = config;
    meta["config_hash"] = fnv1a(config.dump());
    meta["seed"] = seed;
    meta["version"] = kVersion;
    std::ofstream out(dir + "/meta.json");
    if (!out) fail_data("FileNotWritable", "cannot write '" + dir + "/meta.json'");
    out << meta.dump(2) << "\n";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_data("FileNotFound", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct DatasetBundle {
    Dataset dataset;
};

// A dataset directory holds transitions.csv + dataset.json (diagram+schema).
void write_dataset_dir(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    write_transitions_csv(ds, dir + "/transitions.csv");
    json j;
    j["diagram"] = json::parse(diagram_to_json_string(ds.diagram()));
    j["schema"] = json::parse(schema_to_json_string(ds.schema()));
    std::ofstream out(dir + "/dataset.json");
    if (!out) fail_data("FileNotWritable", "cannot write '" + dir + "/dataset.json'");
    out << j.dump(2) << "\n";
}

Dataset read_dataset_dir(const std::string& dir) {
    json j = json::parse(read_file(dir + "/dataset.json"));
    StateDiagram diagram = diagram_from_json_string(j.at("diagram").dump());
    CovariateSchema schema = schema_from_json_string(j.at("schema").dump());
    return read_transitions_csv(dir + "/transitions.csv", diagram, schema);
}

int cmd_simulate(const std::string& dgp_name, const std::string& dgp_json, std::size_t n, std::uint64_t seed,
                 std::uint64_t run, const std::string& ic, const std::string& out) {
    DgpSpec dgp = dgp_json.empty() ? make_dgp(dgp_name) : dgp_from_json_file(dgp_json);
    std::optional<IcMechanism> mech;
    if (!ic.empty()) mech = IcMechanism::named(ic);
    SimulatedStudy study = generate_study(dgp, n, seed, run, mech ? &*mech : nullptr);
    write_dataset_dir(study.dataset, out);
    if (study.ic) {
        write_dataset_dir(study.ic->mid, out + "/ic_mid");
        write_dataset_dir(study.ic->end, out + "/ic_end");
        CsvTable t;
        t.header = {"subject_id", "L", "R", "event"};
        for (const auto& iv : study.ic->intervals)
            t.rows.push_back({iv.subject_id, format_double(iv.L), format_double(iv.R),
                              iv.event ? "1" : "0"});
        write_csv(out + "/intervals.csv", t);
    }
    json cfg{{"command", "simulate"}, {"dgp", dgp.name}, {"n", n},
             {"run", run},            {"ic", ic},        {"dropped_zero_length", study.dropped_zero_length}};
    write_meta(out, cfg, seed);
    std::cout << "wrote " << study.dataset.records().size() << " records to " << out << "\n";
    return 0;
}

int cmd_transform(const std::string& data_dir, const std::string& cuts_kind, int cut_m,
                  const std::string& cuts_file, const std::string& out) {
    Dataset ds = read_dataset_dir(data_dir);
    CutStrategy strat;
    if (cuts_kind == "unique_event_times")
        strat.kind = CutStrategy::Kind::UniqueEventTimes;
    else if (cuts_kind == "quantiles") {
        strat.kind = CutStrategy::Kind::Quantiles;
        strat.m = cut_m;
    } else if (cuts_kind == "explicit") {
        strat.kind = CutStrategy::Kind::Explicit;
        for (const auto& row : read_csv(cuts_file).rows)
            strat.explicit_cuts.push_back(parse_double(row.at(0), 0));
    } else {
        fail_usage("BadArgument", "cuts must be unique_event_times|quantiles|explicit");
    }
    CutPoints cuts = make_cuts(ds, strat);
    PedDataset ped = transform_to_ped(ds, cuts);
    fs::create_directories(out);
    write_ped(ped, out + "/ped");
    json cfg{{"command", "transform"}, {"data", data_dir}, {"cuts", cuts_kind},
             {"m", cut_m},             {"rows", ped.n_rows()}};
    write_meta(out, cfg, 0);
    std::cout << "wrote " << ped.n_rows() << " PED rows to " << out << "/ped.csv\n";
    return 0;
}

int cmd_fit(const std::string& ped_base, const std::string& spec_path, const std::string& weights_path,
            const std::string& out) {
    PedDataset ped = read_ped(ped_base);
    ModelSpec spec = ModelSpec::from_json_file(spec_path);
    std::optional<Eigen::VectorXd> w;
    if (!weights_path.empty()) w = weights_for_ped(WeightTable::read_csv(weights_path), ped);
    FittedPam fitted = fit(ped, spec, w ? &*w : nullptr);
    fitted.save(out);
    {
        std::ofstream dj(out + "/diagram.json");
        dj << diagram_to_json_string(ped.diagram) << "\n";
    }
    {
        CsvTable t;
        t.header = {"term", "label", "estimate", "se", "z", "p"};
        for (const auto& r : coef_table(fitted))
            t.rows.push_back({r.term, r.label, format_double(r.estimate), format_double(r.se),
                              format_double(r.z), format_double(r.p)});
        write_csv(out + "/coefficients.csv", t);
    }
    json cfg{{"command", "fit"},       {"ped", ped_base},           {"spec", json::parse(spec.to_json_string())},
             {"weights", weights_path}, {"deviance", fitted.deviance}, {"edf", fitted.edf_total},
             {"aic", fitted.aic}};
    write_meta(out, cfg, 0);
    std::cout << "fit: deviance " << fitted.deviance << ", edf " << fitted.edf_total << ", aic " << fitted.aic
              << "\n";
    return 0;
}

int cmd_predict(const std::string& fit_dir, int transition, double t_min, double t_max, double t_step,
                double entry, const std::vector<std::string>& profile_kv, const std::string& quantities_csv,
                int n_draws, double dt, std::uint64_t seed, const std::string& out) {
    FittedPam fitted = FittedPam::load(fit_dir);
    StateDiagram diagram = diagram_from_json_string(read_file(fit_dir + "/diagram.json"));

    Profile profile;
    for (const auto& kv : profile_kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) fail_usage("BadArgument", "profile entries look like name=value");
        profile.covariates[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    }
    if (diagram.from_state(transition) >= 1) profile.state_entry[1] = entry;

    std::vector<double> ts;
    for (int i = 0;; ++i) {
        double t = t_min + i * t_step;
        if (t > t_max + 1e-9) break;
        ts.push_back(std::min(t, t_max));
    }

    CsvTable table;
    table.header = {"quantity", "transition", "t", "t_entry_1", "t_entry_2", "estimate", "lo", "hi"};
    std::string entry_str = diagram.from_state(transition) >= 1 ? format_double(entry) : "0";
    std::stringstream qs(quantities_csv);
    std::string qty;
    while (std::getline(qs, qty, ',')) {
        if (qty == "loghazard") {
            Frame frame = prediction_frame(diagram, transition, ts, profile);
            LogHazardPrediction pred = predict_loghazard(fitted, frame);
            for (std::size_t i = 0; i < ts.size(); ++i)
                table.rows.push_back({"loghazard", diagram.transition_label(transition), format_double(ts[i]),
                                      entry_str, "0", format_double(pred.value[i]), format_double(pred.lo[i]),
                                      format_double(pred.hi[i])});
            if (pred.clamped > 0)
                std::cerr << "warning: " << pred.clamped << " prediction points beyond the training knots "
                          << "were clamped to the boundary\n";
        } else if (qty == "cumhaz") {
            CumHazOptions opts;
            opts.dt = dt;
            opts.n_draws = n_draws;
            opts.seed = seed;
            double s = diagram.from_state(transition) >= 1 ? entry : 0.0;
            std::vector<double> ts2;
            for (double t : ts)
                if (t > s + 1e-12) ts2.push_back(t);
            CumHazResult res = cumulative_hazard(fitted, diagram, transition, s, ts2, profile, opts);
            for (std::size_t i = 0; i < ts2.size(); ++i)
                table.rows.push_back({"cumhaz", diagram.transition_label(transition), format_double(ts2[i]),
                                      entry_str, "0", format_double(res.est[i]), format_double(res.lo[i]),
                                      format_double(res.hi[i])});
        } else if (qty == "transprob") {
            TransProbOptions opts;
            opts.dt = dt;
            opts.n_draws = n_draws;
            opts.seed = seed;
            double s = diagram.from_state(transition) >= 1 ? entry : 0.0;
            std::vector<double> ts2;
            for (double t : ts)
                if (t > s + 1e-12) ts2.push_back(t);
            TransProbResult res = transition_matrix(fitted, diagram, s, ts2, profile, opts);
            int a = diagram.from_state(transition), b = diagram.to_state(transition);
            for (std::size_t i = 0; i < ts2.size(); ++i)
                table.rows.push_back(
                    {"transprob", diagram.transition_label(transition), format_double(ts2[i]), entry_str, "0",
                     format_double(res.P[i](a, b)),
                     format_double(opts.n_draws > 0 ? res.lo[i](a, b) : res.P[i](a, b)),
                     format_double(opts.n_draws > 0 ? res.hi[i](a, b) : res.P[i](a, b))});
        } else {
            fail_usage("BadArgument", "quantities are loghazard|cumhaz|transprob");
        }
    }
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
    write_csv(out, table);
    json cfg{{"command", "predict"}, {"fit", fit_dir}, {"transition", transition}, {"quantities", quantities_csv},
             {"n_draws", n_draws},   {"dt", dt}};
    fs::path meta_dir = fs::path(out).parent_path();
    write_meta(meta_dir.empty() ? "." : meta_dir.string(), cfg, seed);
    std::cout << "wrote " << table.rows.size() << " prediction rows to " << out << "\n";
    return 0;
}

int cmd_weights(const std::string& data_dir, const std::string& exposure, const std::string& confounders_csv,
                bool per_state, const std::string& out) {
    Dataset ds = read_dataset_dir(data_dir);
    std::vector<std::string> confounders;
    std::stringstream ss(confounders_csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) confounders.push_back(item);
    WeightOptions opts;
    opts.per_state = per_state;
    WeightTable table = stabilized_weights(ds, exposure, confounders, opts);
    table.write_csv(out);
    for (const auto& [state, mean] : table.state_means())
        std::cout << "state " << state << ": mean weight " << mean << "\n";
    return 0;
}

int cmd_study(const std::string& config_path, const std::string& builtin, int threads_override,
              int runs_override, long n_override, const std::string& out) {
    StudyConfig config = builtin.empty() ? StudyConfig::from_json_file(config_path)
                                         : builtin_study_config(builtin);
    if (threads_override > 0) config.threads = threads_override;
    if (runs_override > 0) config.runs = runs_override;
    if (n_override > 0) config.n = static_cast<std::size_t>(n_override);
    StudyResult result = run_study(config, out);
    std::cout << "study '" << config.name << "': " << config.runs << " runs in " << result.seconds << " s, "
              << result.failed_runs << " failed\n";
    for (const auto& r : result.overall)
        std::cout << "  " << r.model << " " << r.quantity << " k=" << r.transition << " coverage " << r.coverage
                  << " bias " << r.bias << " rmse " << r.rmse << "\n";
    for (const auto& r : result.fixed_effects)
        std::cout << "  " << r.model << " beta[" << r.term << ", k=" << r.transition << "] mean " << r.mean
                  << " truth " << r.truth << " coverage " << r.coverage << "\n";
    for (const auto& r : result.correlations)
        std::cout << "  correlation state " << r.state << ": " << r.mean << " (" << r.lo << "; " << r.hi
                  << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-state piecewise exponential additive models: simulation, fitting, prediction, and "
                 "replication studies"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate multi-state event histories from a DGP");
    std::string sim_dgp = "ssts_tableA1", sim_dgp_json, sim_ic, sim_out = "sim_out";
    std::size_t sim_n = 1000;
    std::uint64_t sim_seed = 0, sim_run = 0;
    sim->add_option("--dgp", sim_dgp, "Built-in DGP name");
    sim->add_option("--dgp-json", sim_dgp_json, "Free-form DGP JSON file");
    sim->add_option("--n", sim_n, "Subjects")->required();
    sim->add_option("--seed", sim_seed, "Seed")->required();
    sim->add_option("--run", sim_run, "Run index (per-run stream)");
    sim->add_option("--ic", sim_ic, "IC mechanism: beta|uniform_jitter|equidistant|uniform_renewal");
    sim->add_option("--out", sim_out, "Output directory")->required();

    // transform
    auto* tr = app.add_subcommand("transform", "Transform a dataset directory into stacked PED");
    std::string tr_data, tr_cuts = "quantiles", tr_cuts_file, tr_out = "ped_out";
    int tr_m = 60;
    tr->add_option("--data", tr_data, "Dataset directory (transitions.csv + dataset.json)")->required();
    tr->add_option("--cuts", tr_cuts, "unique_event_times|quantiles|explicit");
    tr->add_option("--m", tr_m, "Number of quantile intervals");
    tr->add_option("--cuts-file", tr_cuts_file, "Explicit cuts (one per line)");
    tr->add_option("--out", tr_out, "Output directory")->required();

    // fit
    auto* ft = app.add_subcommand("fit", "Fit a penalized multi-state PAM to PED");
    std::string ft_ped, ft_spec, ft_weights, ft_out = "fit_out";
    ft->add_option("--ped", ft_ped, "PED base path (expects <base>.csv and <base>.meta.json)")->required();
    ft->add_option("--spec", ft_spec, "ModelSpec JSON file")->required();
    ft->add_option("--weights", ft_weights, "Weight table CSV (subject_id,from_state,weight)");
    ft->add_option("--out", ft_out, "Output directory")->required();

    // predict
    auto* pr = app.add_subcommand("predict", "Hazard/cumulative-hazard/transition-probability prediction");
    std::string pr_fit, pr_out = "predictions.csv", pr_quant = "loghazard";
    int pr_k = 0, pr_draws = 200;
    double pr_tmin = 0.1, pr_tmax = 10.0, pr_tstep = 0.1, pr_entry = 0.0, pr_dt = 0.01;
    std::uint64_t pr_seed = 1;
    std::vector<std::string> pr_profile;
    pr->add_option("--fit", pr_fit, "Fitted model directory")->required();
    pr->add_option("--transition", pr_k, "Transition index")->required();
    pr->add_option("--quantities", pr_quant, "Comma list: loghazard,cumhaz,transprob");
    pr->add_option("--t-min", pr_tmin, "Grid start");
    pr->add_option("--t-max", pr_tmax, "Grid end");
    pr->add_option("--t-step", pr_tstep, "Grid step");
    pr->add_option("--entry", pr_entry, "Conditioning entry time into the interim state");
    pr->add_option("--profile", pr_profile, "Covariate values name=value");
    pr->add_option("--draws", pr_draws, "Posterior draws for bands");
    pr->add_option("--dt", pr_dt, "Internal integration step");
    pr->add_option("--seed", pr_seed, "Seed for the bands");
    pr->add_option("--out", pr_out, "Output CSV")->required();

    // weights
    auto* wt = app.add_subcommand("weights", "Propensity-score stabilized weights");
    std::string wt_data, wt_exposure, wt_conf, wt_out = "weights.csv";
    bool wt_per_state = false;
    wt->add_option("--data", wt_data, "Dataset directory")->required();
    wt->add_option("--exposure", wt_exposure, "Exposure covariate")->required();
    wt->add_option("--confounders", wt_conf, "Comma list of confounders");
    wt->add_flag("--per-state", wt_per_state, "Fit one propensity model per from-state");
    wt->add_option("--out", wt_out, "Output CSV")->required();

    // study
    auto* st = app.add_subcommand("study", "Run a replicated simulation study");
    std::string st_config, st_builtin, st_out = "study_out";
    int st_threads = 0, st_runs = 0;
    long st_n = 0;
    st->add_option("--config", st_config, "Study config JSON");
    st->add_option("--builtin", st_builtin,
                   "tableA2_small|tableA2_fe_ssts_small|tableA2_fe_mts_small|ieb_large_nn_small|"
                   "ic_fixed_effects_small|ic_baseline_small");
    st->add_option("--threads", st_threads, "Worker threads (default: hardware)");
    st->add_option("--runs", st_runs, "Override run count");
    st->add_option("--n", st_n, "Override dataset size");
    st->add_option("--out", st_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) return cmd_simulate(sim_dgp, sim_dgp_json, sim_n, sim_seed, sim_run, sim_ic, sim_out);
        if (*tr) return cmd_transform(tr_data, tr_cuts, tr_m, tr_cuts_file, tr_out);
        if (*ft) return cmd_fit(ft_ped, ft_spec, ft_weights, ft_out);
        if (*pr)
            return cmd_predict(pr_fit, pr_k, pr_tmin, pr_tmax, pr_tstep, pr_entry, pr_profile, pr_quant,
                               pr_draws, pr_dt, pr_seed, pr_out);
        if (*wt) return cmd_weights(wt_data, wt_exposure, wt_conf, wt_per_state, wt_out);
        if (*st) return cmd_study(st_config, st_builtin, st_threads, st_runs, st_n, st_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.category()) {
            case Error::Category::Usage:
                return 2;
            case Error::Category::Data:
                return 3;
            case Error::Category::Numeric:
                return 4;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
