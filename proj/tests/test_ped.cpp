#include <doctest.h>

#include <cmath>
#include <map>

#include "msmpam/error.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/rng.hpp"
#include "msmpam/stats.hpp"

using namespace msmpam;

namespace {

StateDiagram sim_diagram() { return StateDiagram::progressive(2, 1); }

TransitionRecord rec(const std::string& id, int from, int to, double entry, double exit) {
    TransitionRecord r;
    r.subject_id = id;
    r.from_state = from;
    r.to_state = to;
    r.t_entry = entry;
    r.t_exit = exit;
    return r;
}

}  // namespace

TEST_CASE("make_cuts strategies") {
    auto ds = validate_dataset({rec("1", 0, 1, 0.0, 0.5), rec("2", 0, 1, 0.0, 2.5),
                                rec("3", 0, kCensored, 0.0, 4.0)},
                               sim_diagram(), {});
    CutStrategy expl;
    expl.kind = CutStrategy::Kind::Explicit;
    expl.explicit_cuts = {0, 1, 2, 3};
    CHECK(make_cuts(ds, expl).cuts == std::vector<double>{0, 1, 2, 3});

    CutStrategy uniq;
    uniq.kind = CutStrategy::Kind::UniqueEventTimes;
    CHECK(make_cuts(ds, uniq).cuts == std::vector<double>{0, 0.5, 2.5, 4.0});

    CutStrategy bad;
    bad.kind = CutStrategy::Kind::Explicit;
    bad.explicit_cuts = {0, 2, 1};
    CHECK_THROWS_WITH_AS(make_cuts(ds, bad), doctest::Contains("NonMonotoneExplicitCuts"), Error);
}

TEST_CASE("quantile cuts approximate uniform quartiles") {
    // event times uniform over (0, 10]
    std::vector<TransitionRecord> records;
    Rng rng(5);
    for (int i = 0; i < 4000; ++i)
        records.push_back(rec(std::to_string(i), 0, 1, 0.0, rng.uniform(0.0, 10.0)));
    auto ds = validate_dataset(std::move(records), sim_diagram(), {});
    CutStrategy q;
    q.kind = CutStrategy::Kind::Quantiles;
    q.m = 4;
    CutPoints cuts = make_cuts(ds, q);
    REQUIRE(cuts.cuts.size() == 5);
    CHECK(cuts.cuts[1] == doctest::Approx(2.5).epsilon(0.05));
    CHECK(cuts.cuts[2] == doctest::Approx(5.0).epsilon(0.05));
    CHECK(cuts.cuts[3] == doctest::Approx(7.5).epsilon(0.05));
}

TEST_CASE("transform_episode tiles the episode") {
    CutPoints cuts = CutPoints::explicit_cuts({0, 1, 2, 3});
    auto rows = transform_episode(0.0, 2.5, 1, cuts);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].y == doctest::Approx(1.0));
    CHECK(rows[0].d == 0);
    CHECK(rows[1].y == doctest::Approx(1.0));
    CHECK(rows[1].d == 0);
    CHECK(rows[2].y == doctest::Approx(0.5));
    CHECK(rows[2].d == 1);
    CHECK(rows[2].offset == doctest::Approx(std::log(0.5)));

    // left-truncated tiling starts in the interval containing t_entry
    auto lt = transform_episode(1.2, 2.5, 0, cuts);
    REQUIRE(lt.size() == 2);
    CHECK(lt[0].interval == 1);
    CHECK(lt[0].y == doctest::Approx(0.8));
    CHECK(lt[1].y == doctest::Approx(0.5));
    CHECK(lt[0].d == 0);
    CHECK(lt[1].d == 0);

    // event exactly at a cut belongs to the interval ending there
    CutPoints c2 = CutPoints::explicit_cuts({0, 1, 2});
    auto at_cut = transform_episode(0.0, 2.0, 1, c2);
    REQUIRE(at_cut.size() == 2);
    CHECK(at_cut[0].y == doctest::Approx(1.0));
    CHECK(at_cut[1].y == doctest::Approx(1.0));
    CHECK(at_cut[1].d == 1);

    CHECK_THROWS_WITH_AS(transform_episode(0.0, 5.0, 1, c2), doctest::Contains("CutsDoNotCover"), Error);
}

TEST_CASE("augment_multistate emits one copy per outgoing transition") {
    CutPoints cuts = CutPoints::explicit_cuts({0, 1, 2, 3, 5, 10});
    auto ds = validate_dataset({rec("1", 0, 1, 0.0, 2.0)}, sim_diagram(), {});
    PedDataset ped = augment_multistate(ds, cuts);
    // state 0 has transitions 0->1 and 0->3: two row groups of 2 intervals
    REQUIRE(ped.n_rows() == 4);
    const auto& trans = ped.frame.cat("transition");
    const auto& d = ped.frame.num("d");
    std::map<int, double> events;
    for (std::size_t i = 0; i < ped.n_rows(); ++i) events[trans[i]] += d[i];
    CHECK(events[0] == 1.0);  // 0->1 observed
    CHECK(events[1] == 0.0);  // 0->3 treated as censored

    auto cens = validate_dataset({rec("1", 0, 1, 0.0, 2.0), rec("1", 1, kCensored, 2.0, 5.0)}, sim_diagram(),
                                 {});
    PedDataset ped2 = augment_multistate(cens, cuts);
    const auto& trans2 = ped2.frame.cat("transition");
    const auto& d2 = ped2.frame.num("d");
    const auto& tstart2 = ped2.frame.num("tstart");
    double state1_events = 0.0;
    double min_start_state1 = 99.0;
    for (std::size_t i = 0; i < ped2.n_rows(); ++i) {
        if (trans2[i] >= 2) {
            state1_events += d2[i];
            min_start_state1 = std::min(min_start_state1, tstart2[i]);
        }
    }
    CHECK(state1_events == 0.0);               // censored episode: all d = 0
    CHECK(min_start_state1 == doctest::Approx(2.0));  // left truncation at state entry
}

TEST_CASE("timescales and helper variables per the stratification rules") {
    CutPoints cuts = CutPoints::explicit_cuts({0, 1, 2, 3, 5, 10});
    auto ds = validate_dataset({rec("1", 0, 1, 0.0, 2.0), rec("1", 1, 3, 2.0, 5.0)}, sim_diagram(), {});
    PedDataset ped = transform_to_ped(ds, cuts);

    const auto& trans = ped.frame.cat("transition");
    const auto& t = ped.frame.num("t");
    const auto& t1 = ped.frame.num("t1");
    const auto& te1 = ped.frame.num("t_entry_1");
    const auto& ta0 = ped.frame.cat("trans_after_0");
    const auto& ta1 = ped.frame.cat("trans_after_1");
    const auto& ta1x = ped.frame.cat("trans_after_1_exact");
    const auto& ta0_levels = ped.frame.col("trans_after_0").levels;
    const auto& ta1_levels = ped.frame.col("trans_after_1").levels;
    const auto& ta1x_levels = ped.frame.col("trans_after_1_exact").levels;

    for (std::size_t i = 0; i < ped.n_rows(); ++i) {
        int from = ped.diagram.from_state(trans[i]);
        if (from == 0) {
            CHECK(t1[i] == 0.0);
            CHECK(te1[i] == 0.0);
            CHECK(ta1_levels[ta1[i]] == "none");
            CHECK(ta1x_levels[ta1x[i]] == "none");
        } else {
            CHECK(t1[i] == doctest::Approx(t[i] - 2.0));
            CHECK(te1[i] == doctest::Approx(2.0));
            if (trans[i] == 2) {
                CHECK(ta1_levels[ta1[i]] == "progression");
                CHECK(ta1x_levels[ta1x[i]] == "1->2");
            } else {
                CHECK(ta1_levels[ta1[i]] == "1->3");
                CHECK(ta1x_levels[ta1x[i]] == "1->3");
            }
        }
        // trans_after_0 groups both death transitions under the 0->3 label
        if (trans[i] == 0 || trans[i] == 2)
            CHECK(ta0_levels[ta0[i]] == "progression");
        else
            CHECK(ta0_levels[ta0[i]] == "0->3");
    }
    // spline evaluation time is the interval end point
    const auto& interval = ped.frame.num("interval");
    for (std::size_t i = 0; i < ped.n_rows(); ++i)
        CHECK(t[i] == doctest::Approx(cuts.cuts[static_cast<int>(interval[i]) + 1]));
}

TEST_CASE("episode exposure and event counts are preserved") {
    Rng rng(11);
    std::vector<TransitionRecord> records;
    for (int i = 0; i < 50; ++i) {
        double onset = rng.uniform(0.1, 6.0);
        records.push_back(rec(std::to_string(i), 0, 1, 0.0, onset));
        records.push_back(rec(std::to_string(i), 1, rng.bernoulli(0.5) ? 2 : 3, onset,
                              onset + rng.uniform(0.1, 3.9)));
    }
    auto ds = validate_dataset(std::move(records), sim_diagram(), {});
    CutStrategy q;
    q.kind = CutStrategy::Kind::Quantiles;
    q.m = 13;
    PedDataset ped = transform_to_ped(ds, make_cuts(ds, q));

    // Sum of y over an episode's rows reproduces the episode duration, per transition copy.
    const auto& subj = ped.frame.cat("subject_id");
    const auto& episode = ped.frame.num("episode");
    const auto& trans = ped.frame.cat("transition");
    const auto& y = ped.frame.num("y");
    const auto& d = ped.frame.num("d");
    std::map<std::tuple<int, int, int>, double> exposure;
    std::map<int, double> subject_events;
    for (std::size_t i = 0; i < ped.n_rows(); ++i) {
        exposure[{subj[i], static_cast<int>(episode[i]), trans[i]}] += y[i];
        subject_events[subj[i]] += d[i];
    }
    for (const auto& [key, total] : exposure) {
        const auto& r = ds.records()[ds.subject_episodes()[std::get<0>(key)][std::get<1>(key)]];
        CHECK(total == doctest::Approx(r.t_exit - r.t_entry).epsilon(1e-12));
    }
    // every subject here has exactly two observed transitions
    for (const auto& [s, total] : subject_events) CHECK(total == doctest::Approx(2.0));
}

TEST_CASE("poisson likelihood on PED equals the survival likelihood up to a constant") {
    // Random small multi-state datasets, piecewise-constant log-hazard per
    // (transition x interval): the two log-likelihoods must differ by
    // sum(d * offset) only, for arbitrary parameter values.
    Rng rng(23);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<TransitionRecord> records;
        int n = 4 + rng.uniform_int(0, 8);
        for (int i = 0; i < n; ++i) {
            double onset = rng.uniform(0.5, 5.0);
            if (rng.bernoulli(0.4)) {
                records.push_back(rec(std::to_string(i), 0, kCensored, 0.0, onset));
            } else {
                int to = rng.bernoulli(0.7) ? 1 : 3;
                records.push_back(rec(std::to_string(i), 0, to, 0.0, onset));
                if (to == 1)
                    records.push_back(rec(std::to_string(i), 1, rng.bernoulli(0.5) ? 2 : 3, onset,
                                          onset + rng.uniform(0.2, 4.0)));
            }
        }
        auto ds = validate_dataset(std::move(records), sim_diagram(), {});
        CutPoints cuts = CutPoints::explicit_cuts({0, 1.5, 3.0, 4.5, 6.0, 9.5});
        PedDataset ped = transform_to_ped(ds, cuts);

        // random piecewise-constant log-hazards theta[k][j]
        std::vector<std::vector<double>> theta(4, std::vector<double>(cuts.n_intervals()));
        for (auto& row : theta)
            for (auto& v : row) v = rng.uniform(-3.0, 0.5);

        // Poisson log-likelihood over PED rows (dropping the d! term, zero here)
        const auto& trans = ped.frame.cat("transition");
        const auto& interval = ped.frame.num("interval");
        const auto& offset = ped.frame.num("offset");
        const auto& d = ped.frame.num("d");
        double pois = 0.0, constant = 0.0;
        for (std::size_t i = 0; i < ped.n_rows(); ++i) {
            double eta = theta[trans[i]][static_cast<int>(interval[i])];
            pois += d[i] * (eta + offset[i]) - std::exp(eta + offset[i]);
            constant += d[i] * offset[i];
        }

        // survival log-likelihood: sum over episodes of
        //   d_k log h_k(t_exit) - sum_k integral_{entry}^{exit} h_k
        auto H = [&](int k, double a, double b) {
            double acc = 0.0;
            for (int j = 0; j < cuts.n_intervals(); ++j) {
                double lo = std::max(cuts.lower(j), a), hi = std::min(cuts.upper(j), b);
                if (hi > lo) acc += (hi - lo) * std::exp(theta[k][j]);
            }
            return acc;
        };
        auto interval_of = [&](double t) {
            for (int j = 0; j < cuts.n_intervals(); ++j)
                if (t > cuts.lower(j) && t <= cuts.upper(j)) return j;
            return cuts.n_intervals() - 1;
        };
        double surv = 0.0;
        for (const auto& r : ds.records()) {
            for (int k : ds.diagram().transitions_from(r.from_state)) {
                surv -= H(k, r.t_entry, r.t_exit);
                if (r.to_state == ds.diagram().to_state(k))
                    surv += theta[k][interval_of(r.t_exit)];
            }
        }
        CHECK(pois - constant == doctest::Approx(surv).epsilon(1e-10));
    }
}
