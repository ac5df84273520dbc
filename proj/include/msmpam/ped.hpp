#pragma once

#include <string>
#include <vector>

#include "msmpam/event_data.hpp"
#include "msmpam/frame.hpp"

namespace msmpam {

// Interval cut points a_0 = 0 < a_1 < ... < a_J partitioning follow-up time
// into intervals I_j = (a_{j-1}, a_j].
struct CutPoints {
    std::vector<double> cuts;

    int n_intervals() const { return static_cast<int>(cuts.size()) - 1; }
    double lower(int j) const { return cuts[j]; }      // j = 0..J-1
    double upper(int j) const { return cuts[j + 1]; }
    static CutPoints explicit_cuts(std::vector<double> cuts);
};

struct CutStrategy {
    enum class Kind { UniqueEventTimes, Quantiles, Explicit };
    Kind kind = Kind::UniqueEventTimes;
    int m = 20;                       // Quantiles: number of intervals
    std::vector<double> explicit_cuts;
};

CutPoints make_cuts(const Dataset& dataset, const CutStrategy& strategy);

// One tiled interval of a single episode.
struct EpisodeRow {
    int interval;      // 0-based index into the cut intervals
    double tstart;     // interval bounds clipped to the episode
    double tend;
    double y;          // time at risk in the interval
    double offset;     // log(y)
    int d;             // event indicator (status in the final row, else 0)
};

// Tiles (t_entry, t_exit] over the cut intervals; the final row carries the
// status. Left truncation = tiling starts in the interval containing t_entry.
std::vector<EpisodeRow> transform_episode(double t_entry, double t_exit, int status, const CutPoints& cuts);

// Stacked piecewise exponential data for the whole multi-state dataset.
// Column contract (referenced by ModelSpec):
//   subject_id, episode, transition, interval, tstart, tend, y, offset, d,
//   t, t1..t_{D-1}, t_entry_1..t_entry_{D-1},
//   trans_after_0..trans_after_{D-1}, trans_after_1_exact.., covariates
struct PedDataset {
    CutPoints cuts;
    StateDiagram diagram;
    Frame frame;
    std::size_t dropped_zero_length = 0;  // diagnostics from upstream simulation

    std::size_t n_rows() const { return frame.n_rows(); }
};

// Emits, for each episode in from-state l with q_l outgoing transitions, q_l
// copies of the tiled rows with the cause-specific indicator set only on the
// observed transition's final interval. Rows are ordered by (subject
// first-appearance, episode, transition, interval).
PedDataset augment_multistate(const Dataset& dataset, const CutPoints& cuts);

// Adds the spline evaluation time t (interval end point a_j), per-state time
// scales t_d = max(0, t - entry time into state d), state-entry times, and
// the categorical stratification helpers trans_after_d /
// trans_after_d_exact with reference level `none`.
void attach_timescales_and_helpers(PedDataset& ped);

// augment + attach in one call.
PedDataset transform_to_ped(const Dataset& dataset, const CutPoints& cuts);

// Persistence: <base>.csv with one column per field plus <base>.meta.json
// (cuts, diagram, column kinds/levels).
void write_ped(const PedDataset& ped, const std::string& base_path);
PedDataset read_ped(const std::string& base_path);

// Helper-variable naming shared with the model layer.
std::string timescale_column(int d);     // "t", "t1", "t2", ...
std::string entry_time_column(int d);    // "t_entry_1", ...
std::string trans_after_column(int d);   // "trans_after_0", ...
std::string trans_after_exact_column(int d);

}  // namespace msmpam
