#include "msmpam/ped.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "msmpam/csv.hpp"
#include "msmpam/error.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

using nlohmann::json;

CutPoints CutPoints::explicit_cuts(std::vector<double> cuts) {
    if (cuts.size() < 2) fail_usage("NonMonotoneExplicitCuts", "need at least two cut points");
    for (std::size_t i = 1; i < cuts.size(); ++i)
        if (!(cuts[i] > cuts[i - 1])) fail_usage("NonMonotoneExplicitCuts", "cuts must be strictly increasing");
    if (cuts.front() != 0.0) fail_usage("NonMonotoneExplicitCuts", "first cut must be 0");
    return CutPoints{std::move(cuts)};
}

CutPoints make_cuts(const Dataset& dataset, const CutStrategy& strategy) {
    if (dataset.records().empty()) fail_data("EmptyDataset", "cannot derive cuts from an empty dataset");
    if (strategy.kind == CutStrategy::Kind::Explicit) return CutPoints::explicit_cuts(strategy.explicit_cuts);

    double max_exit = 0.0;
    std::vector<double> event_times;
    for (const auto& r : dataset.records()) {
        max_exit = std::max(max_exit, r.t_exit);
        if (r.to_state != kCensored) event_times.push_back(r.t_exit);
    }
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    std::vector<double> cuts{0.0};
    if (strategy.kind == CutStrategy::Kind::UniqueEventTimes) {
        for (double t : event_times) cuts.push_back(t);
    } else {
        if (strategy.m < 1) fail_usage("BadArgument", "quantile strategy needs m >= 1");
        if (event_times.size() >= 2) {
            for (int i = 1; i < strategy.m; ++i)
                cuts.push_back(quantile(event_times, static_cast<double>(i) / strategy.m));
        } else {
            for (int i = 1; i < strategy.m; ++i) cuts.push_back(max_exit * i / strategy.m);
        }
    }
    cuts.push_back(max_exit);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    if (cuts.size() < 2) fail_data("EmptyDataset", "degenerate cut set");
    return CutPoints{std::move(cuts)};
}

std::vector<EpisodeRow> transform_episode(double t_entry, double t_exit, int status, const CutPoints& cuts) {
    const auto& a = cuts.cuts;
    if (t_entry < a.front() || t_exit > a.back())
        fail_data("CutsDoNotCover", "episode (" + format_double(t_entry) + ", " + format_double(t_exit) +
                                        "] outside cut range");
    // First interval with a[j+1] > t_entry; intervals are half-open (a_j, a_{j+1}].
    int j = static_cast<int>(std::upper_bound(a.begin(), a.end(), t_entry) - a.begin()) - 1;
    if (j < 0) j = 0;
    while (a[j + 1] <= t_entry) ++j;

    std::vector<EpisodeRow> rows;
    for (; j < cuts.n_intervals(); ++j) {
        double lo = std::max(a[j], t_entry);
        double hi = std::min(a[j + 1], t_exit);
        bool last = t_exit <= a[j + 1];
        EpisodeRow row;
        row.interval = j;
        row.tstart = lo;
        row.tend = hi;
        row.y = hi - lo;
        row.offset = std::log(row.y);
        row.d = last ? status : 0;
        rows.push_back(row);
        if (last) break;
    }
    return rows;
}

std::string timescale_column(int d) { return d == 0 ? "t" : "t" + std::to_string(d); }
std::string entry_time_column(int d) { return "t_entry_" + std::to_string(d); }
std::string trans_after_column(int d) { return "trans_after_" + std::to_string(d); }
std::string trans_after_exact_column(int d) { return "trans_after_" + std::to_string(d) + "_exact"; }

PedDataset augment_multistate(const Dataset& dataset, const CutPoints& cuts) {
    const StateDiagram& diagram = dataset.diagram();

    std::vector<int> subject_code, episode, transition, interval;
    std::vector<double> tstart, tend, y, offset;
    std::vector<double> d_event;
    std::size_t n_num = 0, n_cat = 0;
    for (const auto& f : dataset.schema().fields)
        (f.kind == CovariateSchema::Kind::Numeric ? n_num : n_cat) += 1;
    std::vector<std::vector<double>> num_cov(n_num);
    std::vector<std::vector<int>> cat_cov(n_cat);

    for (std::size_t s = 0; s < dataset.subject_ids().size(); ++s) {
        const auto& eps = dataset.subject_episodes()[s];
        for (std::size_t e = 0; e < eps.size(); ++e) {
            const TransitionRecord& rec = dataset.records()[eps[e]];
            auto tiled = transform_episode(rec.t_entry, rec.t_exit, 1, cuts);
            for (int k : diagram.transitions_from(rec.from_state)) {
                bool observed = rec.to_state == diagram.to_state(k);
                for (std::size_t r = 0; r < tiled.size(); ++r) {
                    const auto& row = tiled[r];
                    subject_code.push_back(static_cast<int>(s));
                    episode.push_back(static_cast<int>(e));
                    transition.push_back(k);
                    interval.push_back(row.interval);
                    tstart.push_back(row.tstart);
                    tend.push_back(row.tend);
                    y.push_back(row.y);
                    offset.push_back(row.offset);
                    d_event.push_back(observed && r + 1 == tiled.size() ? 1.0 : 0.0);
                    for (std::size_t c = 0; c < n_num; ++c) num_cov[c].push_back(rec.numeric_covariates[c]);
                    for (std::size_t c = 0; c < n_cat; ++c) cat_cov[c].push_back(rec.categorical_covariates[c]);
                }
            }
        }
    }

    PedDataset ped;
    ped.cuts = cuts;
    ped.diagram = diagram;
    Frame& f = ped.frame;
    f.add("subject_id", Column::categorical(std::move(subject_code),
                                            std::vector<std::string>(dataset.subject_ids())));
    {
        std::vector<double> ep(episode.begin(), episode.end());
        f.add("episode", Column::numeric(std::move(ep)));
    }
    {
        std::vector<std::string> labels;
        for (int k = 0; k < diagram.n_transitions(); ++k) labels.push_back(diagram.transition_label(k));
        f.add("transition", Column::categorical(std::move(transition), std::move(labels)));
    }
    {
        std::vector<double> iv(interval.begin(), interval.end());
        f.add("interval", Column::numeric(std::move(iv)));
    }
    f.add("tstart", Column::numeric(std::move(tstart)));
    f.add("tend", Column::numeric(std::move(tend)));
    f.add("y", Column::numeric(std::move(y)));
    f.add("offset", Column::numeric(std::move(offset)));
    f.add("d", Column::numeric(std::move(d_event)));

    std::size_t ni = 0, ci = 0;
    for (const auto& field : dataset.schema().fields) {
        if (field.kind == CovariateSchema::Kind::Numeric)
            f.add(field.name, Column::numeric(std::move(num_cov[ni++])));
        else
            f.add(field.name, Column::categorical(std::move(cat_cov[ci++]), field.levels));
    }
    return ped;
}

void attach_timescales_and_helpers(PedDataset& ped) {
    const StateDiagram& diagram = ped.diagram;
    Frame& f = ped.frame;
    const std::size_t n = f.n_rows();
    const int D = diagram.final_progression_state();

    // Entry time into each progressive state per subject: the earliest tstart
    // among rows out of that state equals the risk-set entry of the episode
    // (state entry = risk-set entry without recurrent events).
    const auto& subj = f.cat("subject_id");
    const auto& trans = f.cat("transition");
    const auto& tstart_col = f.num("tstart");
    int n_subjects = static_cast<int>(f.col("subject_id").levels.size());
    std::vector<std::vector<double>> entry(n_subjects, std::vector<double>(D + 1, -1.0));
    for (std::size_t i = 0; i < n; ++i) {
        int from = diagram.from_state(trans[i]);
        if (from <= D) {
            double& e = entry[subj[i]][from];
            if (e < 0.0 || tstart_col[i] < e) e = tstart_col[i];
        }
    }

    // Spline evaluation time: the interval end point, under which the
    // piecewise exponential hazard is constant on (a_{j-1}, a_j].
    const auto& interval_col = f.num("interval");
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = ped.cuts.upper(static_cast<int>(interval_col[i]));
    f.add("t", Column::numeric(std::move(t)));
    const auto& t_col = f.num("t");

    for (int d = 1; d <= D - 1; ++d) {
        std::vector<double> td(n, 0.0), ted(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            int from = diagram.from_state(trans[i]);
            if (from >= d) {
                double e_d = entry[subj[i]][d];
                if (e_d < 0.0) fail_data("UnknownState", "subject row out of state >= " + std::to_string(d) +
                                                             " without an entry time into it");
                td[i] = std::max(0.0, t_col[i] - e_d);
                ted[i] = e_d;
            }
        }
        f.add(timescale_column(d), Column::numeric(std::move(td)));
        f.add(entry_time_column(d), Column::numeric(std::move(ted)));
    }

    // trans_after_d: `progression` on progression transitions out of state
    // >= d, the terminal-risk label on d -> R transitions, `none` below d.
    for (int d = 0; d <= D - 1; ++d) {
        std::vector<std::string> levels{"none", "progression"};
        std::map<int, int> risk_level;
        for (int r : diagram.terminal_risks()) {
            risk_level[r] = static_cast<int>(levels.size());
            levels.push_back(std::to_string(d) + "->" + std::to_string(r));
        }
        std::vector<int> codes(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            int k = trans[i];
            int from = diagram.from_state(k);
            if (from < d)
                codes[i] = 0;
            else if (diagram.is_progression(k))
                codes[i] = 1;
            else
                codes[i] = risk_level.at(diagram.to_state(k));
        }
        f.add(trans_after_column(d), Column::categorical(std::move(codes), std::move(levels)));
    }

    // trans_after_d_exact: the transition label itself out of states >= d,
    // `none` below (needed by SSTS models with state-entry times).
    for (int d = 1; d <= D - 1; ++d) {
        std::vector<std::string> levels{"none"};
        std::map<int, int> level_of;
        for (int k = 0; k < diagram.n_transitions(); ++k) {
            if (diagram.from_state(k) >= d) {
                level_of[k] = static_cast<int>(levels.size());
                levels.push_back(diagram.transition_label(k));
            }
        }
        std::vector<int> codes(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto it = level_of.find(trans[i]);
            codes[i] = (it == level_of.end()) ? 0 : it->second;
        }
        f.add(trans_after_exact_column(d), Column::categorical(std::move(codes), std::move(levels)));
    }
}

PedDataset transform_to_ped(const Dataset& dataset, const CutPoints& cuts) {
    PedDataset ped = augment_multistate(dataset, cuts);
    attach_timescales_and_helpers(ped);
    return ped;
}

void write_ped(const PedDataset& ped, const std::string& base_path) {
    CsvTable table;
    const Frame& f = ped.frame;
    for (const auto& name : f.names()) table.header.push_back(name);
    table.rows.resize(f.n_rows());
    for (std::size_t i = 0; i < f.n_rows(); ++i) table.rows[i].reserve(table.header.size());
    for (const auto& name : f.names()) {
        const Column& c = f.col(name);
        for (std::size_t i = 0; i < f.n_rows(); ++i)
            table.rows[i].push_back(c.kind == Column::Kind::Numeric ? format_double(c.values[i])
                                                                    : c.levels[c.codes[i]]);
    }
    write_csv(base_path + ".csv", table);

    json meta;
    meta["cuts"] = ped.cuts.cuts;
    meta["dropped_zero_length"] = ped.dropped_zero_length;
    json diag;
    diag["n_states"] = ped.diagram.n_states();
    diag["absorbing"] = std::vector<int>(ped.diagram.absorbing().begin(), ped.diagram.absorbing().end());
    diag["progression_chain"] = ped.diagram.progression_chain();
    diag["terminal_risks"] =
        std::vector<int>(ped.diagram.terminal_risks().begin(), ped.diagram.terminal_risks().end());
    json trans = json::array();
    for (const auto& [from, to] : ped.diagram.transitions()) trans.push_back({from, to});
    diag["transitions"] = trans;
    meta["diagram"] = diag;
    json cols;
    for (const auto& name : f.names()) {
        const Column& c = f.col(name);
        json jc;
        jc["kind"] = c.kind == Column::Kind::Numeric ? "numeric" : "categorical";
        if (c.kind == Column::Kind::Categorical) jc["levels"] = c.levels;
        cols[name] = jc;
    }
    meta["columns"] = cols;
    std::ofstream out(base_path + ".meta.json");
    if (!out) fail_data("FileNotWritable", "cannot write '" + base_path + ".meta.json'");
    out << meta.dump(2) << "\n";
}

StateDiagram diagram_from_json(const json& diag) {
    std::vector<std::pair<int, int>> transitions;
    for (const auto& t : diag.at("transitions")) transitions.emplace_back(t.at(0).get<int>(), t.at(1).get<int>());
    std::vector<int> abs_v = diag.at("absorbing").get<std::vector<int>>();
    std::vector<int> risks_v = diag.at("terminal_risks").get<std::vector<int>>();
    return StateDiagram(diag.at("n_states").get<int>(), std::set<int>(abs_v.begin(), abs_v.end()),
                        std::move(transitions), diag.at("progression_chain").get<std::vector<int>>(),
                        std::set<int>(risks_v.begin(), risks_v.end()));
}

PedDataset read_ped(const std::string& base_path) {
    std::ifstream in(base_path + ".meta.json");
    if (!in) fail_data("FileNotFound", "cannot open '" + base_path + ".meta.json'");
    json meta = json::parse(in);

    PedDataset ped;
    ped.cuts = CutPoints{meta.at("cuts").get<std::vector<double>>()};
    ped.diagram = diagram_from_json(meta.at("diagram"));
    ped.dropped_zero_length = meta.value("dropped_zero_length", 0u);

    CsvTable table = read_csv(base_path + ".csv");
    const json& cols = meta.at("columns");
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const std::string& name = table.header[c];
        if (!cols.contains(name)) fail_data("SchemaMismatch", "column '" + name + "' missing from PED metadata");
        const json& jc = cols.at(name);
        if (jc.at("kind") == "numeric") {
            std::vector<double> v(table.rows.size());
            for (std::size_t i = 0; i < table.rows.size(); ++i) v[i] = parse_double(table.rows[i][c], i + 2);
            ped.frame.add(name, Column::numeric(std::move(v)));
        } else {
            std::vector<std::string> levels = jc.at("levels").get<std::vector<std::string>>();
            std::map<std::string, int> idx;
            for (std::size_t l = 0; l < levels.size(); ++l) idx[levels[l]] = static_cast<int>(l);
            std::vector<int> codes(table.rows.size());
            for (std::size_t i = 0; i < table.rows.size(); ++i) {
                auto it = idx.find(table.rows[i][c]);
                if (it == idx.end())
                    fail_data("SchemaMismatch", "line " + std::to_string(i + 2) + ": undeclared level '" +
                                                    table.rows[i][c] + "' in '" + name + "'");
                codes[i] = it->second;
            }
            ped.frame.add(name, Column::categorical(std::move(codes), std::move(levels)));
        }
    }
    return ped;
}

}  // namespace msmpam
