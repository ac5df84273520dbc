#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msmpam/dgp.hpp"
#include "msmpam/event_data.hpp"
#include "msmpam/rng.hpp"

namespace msmpam {

// Interval-censoring visit mechanism. Visit counts are DiscreteUniform(1,10)
// for the first three kinds; the renewal mechanism accumulates uniform gaps
// up to the horizon. Parameter values are artifact defaults (the mechanisms
// are named in the source material without parameters) and are logged in
// study metadata.
struct IcMechanism {
    enum class Kind { Beta, UniformJitter, Equidistant, UniformRenewal } kind = Kind::Equidistant;
    int visits_min = 1, visits_max = 10;
    double beta_a = 2.0, beta_b = 2.0;            // Beta: horizon * sorted Beta(a,b)
    double jitter = 0.4;                          // UniformJitter: U(-j, j) * spacing
    double gap_lo = 0.1, gap_hi = 2.5;            // UniformRenewal

    static IcMechanism named(const std::string& name);
    std::string name() const;
};

// Visit schedule for one subject: strictly increasing times in (0, horizon].
std::vector<double> draw_visits(const IcMechanism& mech, double horizon, Rng& rng);

// Inversion sampling on a fine internal grid (hazard constant per step):
// first time with accumulated hazard >= Exp(1) target, nullopt when the
// horizon is reached first.
std::optional<double> draw_event_time(const std::function<double(double)>& total_loghazard, double t_start,
                                      double horizon, Rng& rng, double step = 1e-3);

// One subject from state 0 at t=0: all-cause sojourn draws with
// proportional cause allocation, Weibull/administrative censoring, times
// rounded to the DGP's precision, zero-length episodes dropped (counted,
// and the remainder of the trajectory with them).
std::vector<TransitionRecord> simulate_trajectory(const DgpSpec& dgp, const std::vector<double>& covariates,
                                                  Rng& rng, std::size_t* dropped = nullptr);

// Interval-censored views of an exact dataset under one visit mechanism.
struct IcViews {
    Dataset exact;  // untouched input
    Dataset mid;    // event exits moved to interval mid-points
    Dataset end;    // ... to interval end-points
    struct IntervalObs {
        std::string subject_id;
        double L = 0.0, R = 0.0;   // event: L < T <= R; censored: R = censoring time
        bool event = false;
        std::vector<double> covariates;
    };
    std::vector<IntervalObs> intervals;  // single-event diagrams only
    std::size_t degenerate = 0;          // episodes dropped by the visit mapping
};

IcViews apply_ic(const Dataset& exact, const IcMechanism& mech, Rng& rng);

struct SimulatedStudy {
    Dataset dataset;
    std::optional<IcViews> ic;
    std::uint64_t seed = 0;
    std::uint64_t run_index = 0;
    std::size_t dropped_zero_length = 0;
};

// Deterministic given (seed, run_index): every run owns an independent
// counter-derived stream.
SimulatedStudy generate_study(const DgpSpec& dgp, std::size_t n, std::uint64_t seed, std::uint64_t run_index,
                              const IcMechanism* mechanism = nullptr);

}  // namespace msmpam
