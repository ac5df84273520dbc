#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msmpam/event_data.hpp"
#include "msmpam/fit.hpp"
#include "msmpam/frame.hpp"

namespace msmpam {

// Covariate values plus the conditioning history (state-entry times) used
// for prediction; non-Markov hazards read their time scales off these.
struct Profile {
    std::map<std::string, double> covariates;
    std::map<int, double> state_entry;  // d -> time the subject entered state d
};

// Evaluation grid: 1-D in t, or triangular 2-D (t x t_entry with
// t_entry <= t).
struct EvalGrid {
    std::vector<double> t;
    double entry_step = 0.0;                         // 0 => 1-D
    std::vector<std::pair<double, double>> points2d; // (t, t_entry), triangular

    bool is_two_d() const { return entry_step > 0.0; }
    static EvalGrid one_d(double t_min, double t_max, double step);
    static EvalGrid triangular(double t_min, double t_max, double step, double entry_step);
};

// Builds a Frame holding every model column for transition k evaluated at
// the given global times, with time scales and helpers derived from the
// profile's state-entry history.
Frame prediction_frame(const StateDiagram& diagram, int k, const std::vector<double>& t, const Profile& profile);

struct LogHazardPrediction {
    std::vector<double> value;
    std::vector<double> se;
    std::vector<double> lo, hi;       // value -/+ 1.96 se
    std::size_t clamped = 0;          // rows evaluated beyond the training knots
};

// x'beta with se = sqrt(x' V x) per row; rows outside the training knot
// range are clamped at the boundary and counted (warn-and-clamp policy).
LogHazardPrediction predict_loghazard(const FittedPam& fit, const Frame& newdata);

struct CumHazOptions {
    double dt = 0.01;
    int n_draws = 200;
    std::uint64_t seed = 1;
};

struct CumHazResult {
    std::vector<double> t;
    std::vector<double> est, lo, hi;
};

// Left-Riemann cumulative hazard of transition k over [s, t] on the fine
// internal step, with percentile bands from coefficient-posterior draws.
CumHazResult cumulative_hazard(const FittedPam& fit, const StateDiagram& diagram, int k, double s,
                               const std::vector<double>& grid_t, const Profile& profile,
                               const CumHazOptions& opts = {});

struct TransProbOptions {
    double dt = 0.01;
    int n_draws = 0;  // 0 = point estimates only
    std::uint64_t seed = 1;
};

struct TransProbResult {
    std::vector<double> times;
    std::vector<Eigen::MatrixXd> P;        // row-stochastic, one per time
    std::vector<Eigen::MatrixXd> lo, hi;   // percentile bands when n_draws > 0
};

// Discrete product integral P(s,t) = prod over steps of (I + dP(u)), with
// dP built from the fitted transition-specific hazard increments. Raises
// StepTooCoarse when a single off-diagonal increment exceeds 1.
TransProbResult transition_matrix(const FittedPam& fit, const StateDiagram& diagram, double s,
                                  const std::vector<double>& grid_t, const Profile& profile,
                                  const TransProbOptions& opts = {});

// transition_matrix with posterior draws (default 200), seeded.
TransProbResult transprob_ci(const FittedPam& fit, const StateDiagram& diagram, double s,
                             const std::vector<double>& grid_t, const Profile& profile, int n_draws = 200,
                             std::uint64_t seed = 1, double dt = 0.01);

}  // namespace msmpam
