#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msmpam/dgp.hpp"
#include "msmpam/simulate.hpp"
#include "msmpam/spline.hpp"

namespace msmpam {

// One estimator in a replication study.
struct StudyModel {
    std::string name;
    enum class Type { Pam, WeibullAft, NelsonAalen } type = Type::Pam;
    enum class Form { Ssts, Mts } form = Form::Ssts;
    SmoothSpec::Mode smooth_mode = SmoothSpec::Mode::Ps;
    std::vector<std::string> covariates;      // linear terms (by transition)
    int k = 20;
    // exact | mid | end (dataset view), plus adjustment (AFT interval likelihood)
    std::string estimation_point = "exact";
};

struct StudyConfig {
    std::string name = "study";
    std::string dgp;            // built-in DGP name
    std::string dgp_json;       // free-form DGP (overrides `dgp` when set)
    std::vector<StudyModel> models;
    std::size_t n = 5000;
    int runs = 100;
    std::uint64_t seed = 1;

    double t_min = 0.1, t_max = 10.0, t_step = 0.1;
    double entry_step = 0.5;    // 2-D grid spacing for post-onset transitions

    std::vector<std::string> quantities;  // loghazard | cumhaz | transprob
    std::string ic_mechanism;             // empty = none
    int cut_intervals = 60;               // quantile cut points for PED
    int n_draws = 200;                    // posterior draws for H / P bands
    double dt = 0.01;                     // product-integral / H fine step
    int threads = 0;                      // 0 = hardware concurrency
    std::vector<std::string> track_fixed_effects;
    std::vector<std::string> correlation;  // {x1, x2} when tracked

    static StudyConfig from_json_string(const std::string& text);
    static StudyConfig from_json_file(const std::string& path);
    std::string to_json_string() const;
};

// Reduced-scale built-ins: tableA2_small, tableA2_fixed_effects_small,
// ieb_large_nn_small, ic_fixed_effects_small, ic_baseline_small.
StudyConfig builtin_study_config(const std::string& name);

struct OverallRow {
    std::string model, quantity;
    int transition = 0;
    int points = 0;
    int runs_used = 0;
    double coverage = 0.0;         // mean over grid points of pointwise coverage
    double cp_lo_avg = 0.0, cp_hi_avg = 0.0;       // average of pointwise CP bounds
    double cp_lo_pooled = 0.0, cp_hi_pooled = 0.0; // CP on pooled covered counts
    double bias = 0.0, rmse = 0.0;                 // averaged over points
};

struct PointRow {
    std::string model, quantity;
    int transition = 0;
    double t = 0.0, t_entry = 0.0;
    int covered = 0, total = 0;
    double coverage = 0.0, cp_lo = 0.0, cp_hi = 0.0;
    double bias = 0.0, rmse = 0.0;
};

struct FixedEffectRow {
    std::string model, term;
    int transition = 0;
    double truth = 0.0;
    double mean = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0;
    int covered = 0, total = 0;
    double coverage = 0.0, cp_lo = 0.0, cp_hi = 0.0;
};

struct CorrelationRow {
    int state = 0;
    double mean = 0.0, lo = 0.0, hi = 0.0;  // empirical 95% interval over runs
    int runs = 0;
};

struct StudyResult {
    StudyConfig config;
    std::vector<PointRow> pointwise;
    std::vector<OverallRow> overall;
    std::vector<FixedEffectRow> fixed_effects;
    std::vector<CorrelationRow> correlations;
    int failed_runs = 0;
    std::vector<std::string> failures;
    std::size_t dropped_zero_length = 0;
    double seconds = 0.0;

    const OverallRow& find_overall(const std::string& model, const std::string& quantity, int transition) const;
    const FixedEffectRow& find_fixed_effect(const std::string& model, const std::string& term,
                                            int transition) const;
};

// Runs every replication (parallel worker pool, deterministic per-run
// streams, aggregation in run-index order), evaluates coverage/bias/RMSE
// against the closed-form DGP truth, and, when out_dir is non-empty, writes
// coverage.csv, bias_rmse.csv, fixed_effects.csv, correlations.csv and
// meta.json.
StudyResult run_study(const StudyConfig& config, const std::string& out_dir = "");

// Coverage helpers shared with tests.
struct CoverageTableRow {
    double point_estimate = 0.0;
    int covered = 0, total = 0;
    double cp_lo = 0.0, cp_hi = 0.0;
};
CoverageTableRow coverage_row(int covered, int total);

}  // namespace msmpam
