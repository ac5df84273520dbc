#include "msmpam/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "msmpam/error.hpp"

namespace msmpam {

IcMechanism IcMechanism::named(const std::string& name) {
    IcMechanism m;
    if (name == "beta")
        m.kind = Kind::Beta;
    else if (name == "uniform_jitter")
        m.kind = Kind::UniformJitter;
    else if (name == "equidistant")
        m.kind = Kind::Equidistant;
    else if (name == "uniform_renewal")
        m.kind = Kind::UniformRenewal;
    else
        fail_usage("UnknownMechanism", "no IC mechanism named '" + name + "'");
    return m;
}

std::string IcMechanism::name() const {
    switch (kind) {
        case Kind::Beta:
            return "beta";
        case Kind::UniformJitter:
            return "uniform_jitter";
        case Kind::Equidistant:
            return "equidistant";
        case Kind::UniformRenewal:
            return "uniform_renewal";
    }
    return "?";
}

std::vector<double> draw_visits(const IcMechanism& mech, double horizon, Rng& rng) {
    std::vector<double> v;
    switch (mech.kind) {
        case IcMechanism::Kind::Beta: {
            int n = rng.uniform_int(mech.visits_min, mech.visits_max);
            for (int i = 0; i < n; ++i) v.push_back(horizon * rng.beta(mech.beta_a, mech.beta_b));
            std::sort(v.begin(), v.end());
            break;
        }
        case IcMechanism::Kind::UniformJitter: {
            int n = rng.uniform_int(mech.visits_min, mech.visits_max);
            double spacing = horizon / n;
            for (int i = 1; i <= n; ++i) {
                double t = i * spacing + rng.uniform(-mech.jitter, mech.jitter) * spacing;
                v.push_back(std::min(std::max(t, 1e-9), horizon));
            }
            break;
        }
        case IcMechanism::Kind::Equidistant: {
            int n = rng.uniform_int(mech.visits_min, mech.visits_max);
            for (int i = 1; i <= n; ++i) v.push_back(i * horizon / n);
            break;
        }
        case IcMechanism::Kind::UniformRenewal: {
            double t = 0.0;
            for (;;) {
                t += rng.uniform(mech.gap_lo, mech.gap_hi);
                if (t > horizon) break;
                v.push_back(t);
            }
            break;
        }
    }
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::optional<double> draw_event_time(const std::function<double(double)>& total_loghazard, double t_start,
                                      double horizon, Rng& rng, double step) {
    const double target = rng.exponential();
    double H = 0.0, u = t_start;
    while (u < horizon) {
        double w = std::min(step, horizon - u);
        double h = std::exp(total_loghazard(u));
        double H_next = H + h * w;
        if (H_next >= target) return u + (target - H) / h;
        H = H_next;
        u += w;
    }
    return std::nullopt;
}

namespace {

constexpr double kStep = 1e-3;

// Per-transition multiplicative hazard tables on the fine grid:
//   h_k(u) = exp(beta0) * et[u] * et1[u - entry_1] * exp(f_entry1(entry_1)) * exp(beta_x'x)
struct DgpTables {
    struct Trans {
        bool tabulated = false;
        double base = 1.0;           // exp(beta0)
        std::vector<double> et;      // exp(f_t) on the grid; empty = 1
        std::vector<double> et1;     // exp(f_t1) on the grid; empty = 1
        bool has_entry1 = false;     // f_entry1 factor computed per sojourn
    };
    std::vector<Trans> trans;
    int n_steps = 0;
};

DgpTables build_tables(const DgpSpec& dgp) {
    DgpTables tabs;
    tabs.n_steps = static_cast<int>(std::ceil(dgp.horizon / kStep)) + 1;
    for (const auto& tr : dgp.transitions) {
        DgpTables::Trans t;
        if (!tr.expr) {
            t.tabulated = true;
            t.base = std::exp(tr.beta0);
            if (tr.f_t) {
                t.et.resize(tabs.n_steps);
                for (int i = 0; i < tabs.n_steps; ++i) t.et[i] = std::exp(tr.f_t(i * kStep));
            }
            if (tr.f_t1) {
                t.et1.resize(tabs.n_steps);
                for (int i = 0; i < tabs.n_steps; ++i) t.et1[i] = std::exp(tr.f_t1(i * kStep));
            }
            t.has_entry1 = static_cast<bool>(tr.f_entry1);
        }
        tabs.trans.push_back(std::move(t));
    }
    return tabs;
}

double round_to(double x, int decimals) {
    double scale = std::pow(10.0, decimals);
    return std::round(x * scale) / scale;
}

}  // namespace

namespace {

std::vector<TransitionRecord> simulate_trajectory_tabulated(const DgpSpec& dgp, const DgpTables& tabs,
                                                            const std::vector<double>& covariates, Rng& rng,
                                                            std::size_t* dropped) {
    double censor = dgp.horizon;
    if (dgp.has_censoring) censor = std::min(censor, rng.weibull(dgp.censor_shape, dgp.censor_scale));

    std::vector<double> state_entry(dgp.diagram.n_states(), -1.0);
    state_entry[0] = 0.0;

    struct RawEpisode {
        int from, to;
        double entry, exit;
    };
    std::vector<RawEpisode> episodes;

    int state = 0;
    double t_cur = 0.0;
    while (!dgp.diagram.is_absorbing(state)) {
        std::vector<int> out = dgp.diagram.transitions_from(state);
        // Per-sojourn multiplicative factors (covariates, entry-time effect).
        std::vector<double> factor(out.size(), 1.0);
        double entry1 = state >= 1 ? state_entry[1] : 0.0;
        int idx_entry1 = static_cast<int>(std::floor(entry1 / kStep + 1e-9));
        for (std::size_t j = 0; j < out.size(); ++j) {
            const auto& tr = dgp.transitions[out[j]];
            if (!tr.expr) {
                double f = tabs.trans[out[j]].base;
                for (std::size_t c = 0; c < tr.beta_x.size(); ++c) f *= std::exp(tr.beta_x[c] * covariates[c]);
                if (tr.f_entry1) f *= std::exp(tr.f_entry1(entry1));
                factor[j] = f;
            }
        }

        auto hazard_at = [&](double u, int grid_i, std::size_t j) -> double {
            int k = out[j];
            const auto& tt = tabs.trans[k];
            if (tt.tabulated) {
                double h = factor[j];
                if (!tt.et.empty()) h *= tt.et[std::min(grid_i, tabs.n_steps - 1)];
                if (!tt.et1.empty()) h *= tt.et1[std::max(0, std::min(grid_i - idx_entry1, tabs.n_steps - 1))];
                return h;
            }
            return std::exp(eval_dgp_loghazard(dgp, k, u, state_entry, covariates));
        };

        // Inversion sampling of the all-cause sojourn on the fine grid.
        const double target = rng.exponential();
        double H = 0.0, u = t_cur;
        double event_time = -1.0;
        std::vector<double> cause_hazards(out.size());
        while (u < dgp.horizon) {
            double w = std::min(kStep, dgp.horizon - u);
            int gi = static_cast<int>(std::floor(u / kStep + 1e-9));
            double total = 0.0;
            for (std::size_t j = 0; j < out.size(); ++j) {
                cause_hazards[j] = hazard_at(u, gi, j);
                total += cause_hazards[j];
            }
            double H_next = H + total * w;
            if (total > 0.0 && H_next >= target) {
                event_time = u + (target - H) / total;
                break;
            }
            H = H_next;
            u += w;
        }

        if (event_time < 0.0 || event_time >= censor) {
            episodes.push_back({state, kCensored, t_cur, censor});
            break;
        }
        // Proportional cause allocation at the event time.
        double total = 0.0;
        for (double h : cause_hazards) total += h;
        double pick = rng.uniform() * total;
        std::size_t cause = 0;
        for (; cause + 1 < out.size(); ++cause) {
            if (pick < cause_hazards[cause]) break;
            pick -= cause_hazards[cause];
        }
        int to = dgp.diagram.to_state(out[cause]);
        episodes.push_back({state, to, t_cur, event_time});
        state = to;
        state_entry[state] = event_time;
        t_cur = event_time;
    }

    // Round once per boundary, then drop zero-length episodes; a dropped
    // episode severs the chain, so the rest of the trajectory goes with it.
    std::vector<TransitionRecord> records;
    for (const auto& ep : episodes) {
        double entry = round_to(ep.entry, dgp.round_decimals);
        double exit = round_to(ep.exit, dgp.round_decimals);
        if (!(exit > entry)) {
            if (dropped) *dropped += episodes.size() - records.size();
            break;
        }
        TransitionRecord r;
        r.from_state = ep.from;
        r.to_state = ep.to;
        r.t_entry = entry;
        r.t_exit = exit;
        r.numeric_covariates = covariates;
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace

std::vector<TransitionRecord> simulate_trajectory(const DgpSpec& dgp, const std::vector<double>& covariates,
                                                  Rng& rng, std::size_t* dropped) {
    DgpTables tabs = build_tables(dgp);
    return simulate_trajectory_tabulated(dgp, tabs, covariates, rng, dropped);
}

IcViews apply_ic(const Dataset& exact, const IcMechanism& mech, Rng& rng) {
    const double horizon = [&] {
        double h = 0.0;
        for (const auto& r : exact.records()) h = std::max(h, r.t_exit);
        return std::max(h, 10.0);
    }();
    const bool single_event = exact.diagram().n_transitions() == 1;

    std::vector<TransitionRecord> mid_records, end_records;
    IcViews views{exact, exact, exact, {}, 0};
    std::size_t degenerate = 0;

    for (std::size_t s = 0; s < exact.subject_ids().size(); ++s) {
        std::vector<double> visits = draw_visits(mech, horizon, rng);
        if (visits.empty()) {
            ++degenerate;
            continue;
        }
        const double last_visit = visits.back();

        double prev_exit_mid = -1.0, prev_exit_end = -1.0;
        bool truncated = false;
        for (std::size_t e = 0; e < exact.subject_episodes()[s].size() && !truncated; ++e) {
            const TransitionRecord& r = exact.records()[exact.subject_episodes()[s][e]];
            TransitionRecord m = r, en = r;
            if (e > 0) {
                m.t_entry = prev_exit_mid;
                en.t_entry = prev_exit_end;
            }
            if (r.to_state == kCensored) {
                // Censoring times are never moved.
            } else {
                double T = r.t_exit;
                auto it = std::lower_bound(visits.begin(), visits.end(), T);
                if (it == visits.end()) {
                    // Event after the last visit: right-censored there.
                    m.to_state = en.to_state = kCensored;
                    m.t_exit = en.t_exit = last_visit;
                    truncated = true;
                    if (single_event)
                        views.intervals.push_back({r.subject_id, last_visit, last_visit, false,
                                                   r.numeric_covariates});
                } else {
                    double R = *it;
                    double L = (it == visits.begin()) ? 0.0 : *(it - 1);
                    m.t_exit = 0.5 * (L + R);
                    en.t_exit = R;
                    if (single_event)
                        views.intervals.push_back({r.subject_id, L, R, true, r.numeric_covariates});
                }
            }
            if (m.t_exit > m.t_entry) {
                prev_exit_mid = m.t_exit;
                mid_records.push_back(std::move(m));
            } else {
                ++degenerate;
                truncated = true;
            }
            if (en.t_exit > en.t_entry) {
                prev_exit_end = en.t_exit;
                end_records.push_back(std::move(en));
            } else if (!truncated) {
                ++degenerate;
                truncated = true;
            }
            if (r.to_state == kCensored && single_event)
                views.intervals.push_back({r.subject_id, r.t_exit, r.t_exit, false, r.numeric_covariates});
        }
    }

    views.mid = validate_dataset(std::move(mid_records), exact.diagram(), exact.schema());
    views.end = validate_dataset(std::move(end_records), exact.diagram(), exact.schema());
    views.degenerate = degenerate;
    return views;
}

SimulatedStudy generate_study(const DgpSpec& dgp, std::size_t n, std::uint64_t seed, std::uint64_t run_index,
                              const IcMechanism* mechanism) {
    if (n < 1) fail_usage("BadArgument", "need n >= 1 subjects");
    Rng rng = Rng::for_run(seed, run_index);

    CovariateSchema schema;
    for (const auto& law : dgp.covariates)
        schema.fields.push_back({law.name, CovariateSchema::Kind::Numeric, {}});

    SimulatedStudy study;
    study.seed = seed;
    study.run_index = run_index;

    std::vector<TransitionRecord> records;
    DgpTables tabs = build_tables(dgp);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x;
        for (const auto& law : dgp.covariates)
            x.push_back(law.kind == CovariateLaw::Kind::Bernoulli ? (rng.bernoulli(law.p) ? 1.0 : 0.0)
                                                                  : rng.normal());
        auto traj = simulate_trajectory_tabulated(dgp, tabs, x, rng, &study.dropped_zero_length);
        for (auto& r : traj) {
            r.subject_id = std::to_string(i + 1);
            records.push_back(std::move(r));
        }
    }
    study.dataset = validate_dataset(std::move(records), dgp.diagram, schema);
    if (mechanism) study.ic = apply_ic(study.dataset, *mechanism, rng);
    return study;
}

}  // namespace msmpam
