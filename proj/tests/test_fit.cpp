#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "msmpam/dgp.hpp"
#include "msmpam/error.hpp"
#include "msmpam/fit.hpp"
#include "msmpam/model.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/rng.hpp"
#include "msmpam/simulate.hpp"
#include "msmpam/stats.hpp"

using namespace msmpam;

namespace {

PedDataset ped_from_dgp(const std::string& dgp, std::size_t n, std::uint64_t seed, int m_cuts) {
    SimulatedStudy study = generate_study(make_dgp(dgp), n, seed, 0);
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = m_cuts;
    return transform_to_ped(study.dataset, make_cuts(study.dataset, strat));
}

Eigen::MatrixXd dense_design(const AssembledDesign& d) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.n_rows()), d.p);
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        Eigen::VectorXd raw = Eigen::VectorXd::Zero(d.p_raw);
        for (int a = d.row_ptr[i]; a < d.row_ptr[i + 1]; ++a) raw[d.col_idx[a]] += d.values[a];
        X.row(static_cast<Eigen::Index>(i)) = d.fold_from_raw(raw).transpose();
    }
    return X;
}

// Generic damped dense Newton on the explicit penalized Poisson objective,
// independent of the IRLS code path.
Eigen::VectorXd newton_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& off,
                              const Eigen::VectorXd& w, const Eigen::MatrixXd& S) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
    auto objective = [&](const Eigen::VectorXd& b) {
        Eigen::VectorXd eta = X * b + off;
        double f = 0.5 * b.dot(S * b);
        for (Eigen::Index i = 0; i < y.size(); ++i) f += w[i] * (std::exp(eta[i]) - y[i] * eta[i]);
        return f;
    };
    double fcur = objective(beta);
    for (int iter = 0; iter < 200; ++iter) {
        Eigen::VectorXd mu = (X * beta + off).array().exp();
        Eigen::VectorXd grad = X.transpose() * (w.asDiagonal() * (mu - y)) + S * beta;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-9) break;
        Eigen::MatrixXd H = X.transpose() * (w.cwiseProduct(mu)).asDiagonal() * X + S;
        Eigen::VectorXd step = H.ldlt().solve(-grad);
        double scale = 1.0;
        for (int half = 0; half < 60; ++half) {
            double fnew = objective(beta + scale * step);
            if (std::isfinite(fnew) && fnew <= fcur) {
                beta += scale * step;
                fcur = fnew;
                break;
            }
            scale *= 0.5;
        }
    }
    return beta;
}

ModelTerm smooth_term(const std::string& var, int k, const std::string& by = "") {
    ModelTerm t;
    t.kind = ModelTerm::Kind::Smooth;
    t.smooth.variable = var;
    t.smooth.k = k;
    t.smooth.by = by;
    return t;
}

}  // namespace

TEST_CASE("intercept-only fit recovers the closed-form poisson rate") {
    // 10 events over 200 units of exposure: intercept = log(10/200)
    std::vector<TransitionRecord> records;
    for (int i = 0; i < 20; ++i) {
        TransitionRecord r;
        r.subject_id = std::to_string(i);
        r.from_state = 0;
        r.to_state = i < 10 ? 1 : kCensored;
        r.t_entry = 0.0;
        r.t_exit = 10.0;
        records.push_back(r);
    }
    auto ds = validate_dataset(std::move(records), StateDiagram::progressive(1, 0), {});
    PedDataset ped = transform_to_ped(ds, CutPoints::explicit_cuts({0, 2.5, 5, 7.5, 10}));
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    FittedPam f = fit(ped, spec);
    CHECK(f.beta[0] == doctest::Approx(std::log(10.0 / 200.0)).epsilon(1e-10));
    // Poisson information: se = 1/sqrt(events)
    auto rows = coef_table(f);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].se == doctest::Approx(1.0 / std::sqrt(10.0)).epsilon(1e-8));
}

TEST_CASE("pirls at fixed lambda matches the dense newton oracle") {
    PedDataset ped = ped_from_dgp("ic_weibull", 200, 31, 8);
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 8));
    AssembledDesign design = assemble_design(ped, spec);
    REQUIRE(design.groups.size() == 1);

    Eigen::VectorXd lambdas(1);
    lambdas << 2.5;
    PirlsFit pf = fit_pirls(design, lambdas);
    CHECK(pf.grad_max < 1e-6);

    Eigen::MatrixXd X = dense_design(design);
    Eigen::VectorXd oracle =
        newton_oracle(X, design.y, design.offset, design.prior_weights, design.penalty_matrix(lambdas));
    CHECK((pf.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("very large lambda forces the smooth into the penalty null space") {
    PedDataset ped = ped_from_dgp("ic_pexp", 400, 37, 20);
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 10));
    AssembledDesign design = assemble_design(ped, spec);

    Eigen::VectorXd lambdas(1);
    lambdas << 1e7;
    PirlsFit pf = fit_pirls(design, lambdas);
    const DesignBlock& block = design.blocks[1];
    Eigen::VectorXd gamma = pf.beta.segment(block.col_offset, block.n_cols);
    double penalty_form = gamma.dot(block.penalty * gamma);
    CHECK(std::sqrt(penalty_form) < 1e-6);
}

TEST_CASE("weights identities") {
    PedDataset ped = ped_from_dgp("ic_weibull", 150, 41, 6);
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 6));

    FittedPam unweighted = fit(ped, spec);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(ped.n_rows());
    FittedPam weighted = fit(ped, spec, &ones);
    CHECK((unweighted.beta - weighted.beta).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(unweighted.aic == weighted.aic);

    // weights c > 0 scale the likelihood; with the penalty scaled alongside
    // the maximizer is unchanged
    Eigen::VectorXd twos = 2.0 * ones;
    AssembledDesign d1 = assemble_design(ped, spec);
    AssembledDesign d2 = assemble_design(ped, spec, &twos);
    Eigen::VectorXd lam(1);
    lam << 3.0;
    PirlsFit base = fit_pirls(d1, lam);
    PirlsFit doubled = fit_pirls(d2, 2.0 * lam);
    CHECK((doubled.beta - base.beta).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("row duplication equals weight two") {
    SimulatedStudy study = generate_study(make_dgp("ic_weibull"), 80, 43, 0);
    std::vector<TransitionRecord> doubled;
    for (const auto& r : study.dataset.records()) {
        doubled.push_back(r);
        TransitionRecord copy = r;
        copy.subject_id += "_dup";
        doubled.push_back(copy);
    }
    auto ds2 = validate_dataset(std::move(doubled), study.dataset.diagram(), study.dataset.schema());

    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = 5;
    CutPoints cuts = make_cuts(study.dataset, strat);
    PedDataset ped1 = transform_to_ped(study.dataset, cuts);
    PedDataset ped2 = transform_to_ped(ds2, cuts);

    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 5));

    Eigen::VectorXd lam(1);
    lam << 1.0;
    Eigen::VectorXd w2 = 2.0 * Eigen::VectorXd::Ones(ped1.n_rows());
    AssembledDesign dd = assemble_design(ped2, spec);
    AssembledDesign dw = assemble_design(ped1, spec, &w2);
    PirlsFit fd = fit_pirls(dd, lam);
    PirlsFit fw = fit_pirls(dw, lam);
    CHECK((fd.beta - fw.beta).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("lambda selection shrinks noise and tracks curvature") {
    SUBCASE("flat true hazard: edf near the null space dimension") {
        DgpSpec dgp = make_dgp("ic_weibull");
        dgp.transitions[0].f_t = nullptr;  // constant log-hazard
        dgp.transitions[0].beta0 = -2.0;
        SimulatedStudy study = generate_study(dgp, 3000, 47, 0);
        CutStrategy strat;
        strat.kind = CutStrategy::Kind::Quantiles;
        strat.m = 25;
        PedDataset ped = transform_to_ped(study.dataset, make_cuts(study.dataset, strat));
        ModelSpec spec;
        spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
        spec.terms.push_back(smooth_term("t", 20));
        FittedPam f = fit(ped, spec);
        CHECK(f.edf_groups[0] <= 2.5);
    }
    SUBCASE("strongly curved hazard: edf well above the null space") {
        PedDataset ped = ped_from_dgp("ic_pexp", 5000, 53, 40);
        ModelSpec spec;
        spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
        spec.terms.push_back(smooth_term("t", 20));
        FittedPam f = fit(ped, spec);
        CHECK(f.edf_groups[0] > 4.0);
        CHECK(f.grad_max < 1e-6);
        CHECK(std::isfinite(f.aic));
    }
}

TEST_CASE("symmetric smooth groups select near-identical lambdas") {
    // Mirrored competing-risk data: twin subjects with the event assigned to
    // 0->1 and 0->2 respectively, so both transitions carry identical
    // information.
    Rng rng(59);
    std::vector<TransitionRecord> records;
    for (int i = 0; i < 500; ++i) {
        double t = rng.weibull(1.3, 6.0);
        bool event = t < 10.0;
        double texit = std::min(t, 10.0);
        TransitionRecord a;
        a.subject_id = "a" + std::to_string(i);
        a.from_state = 0;
        a.to_state = event ? 1 : kCensored;
        a.t_entry = 0.0;
        a.t_exit = texit;
        TransitionRecord b = a;
        b.subject_id = "b" + std::to_string(i);
        b.to_state = event ? 2 : kCensored;
        records.push_back(a);
        records.push_back(b);
    }
    auto ds = validate_dataset(std::move(records), StateDiagram::progressive(1, 1), {});
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = 12;
    PedDataset ped = transform_to_ped(ds, make_cuts(ds, strat));
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 10, "transition"));
    FittedPam f = fit(ped, spec);
    REQUIRE(f.lambdas.size() == 2);
    CHECK(std::fabs(std::log10(f.lambdas[0]) - std::log10(f.lambdas[1])) < 0.2);
    CHECK(std::fabs(f.beta[0] - f.beta[1]) < 1e-6);  // identical intercepts by symmetry
}

TEST_CASE("coef table aliases and TermNotFound") {
    SimulatedStudy study = generate_study(make_dgp("ic_weibull_x1"), 400, 61, 0);
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = 8;
    PedDataset ped = transform_to_ped(study.dataset, make_cuts(study.dataset, strat));
    ped.frame.add("x1_alias", Column::numeric(ped.frame.num("x1")));

    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 8));
    spec.terms.push_back({ModelTerm::Kind::Linear, "x1", "", {}});

    // literally duplicating the column makes the design singular
    ModelSpec dup = spec;
    dup.terms.push_back({ModelTerm::Kind::Linear, "x1_alias", "", {}});
    CHECK_THROWS_WITH_AS(assemble_design(ped, dup), doctest::Contains("RankDeficiency"), Error);

    ModelSpec alias_spec = spec;
    alias_spec.terms.back().column = "x1_alias";
    FittedPam f1 = fit(ped, spec);
    FittedPam f2 = fit(ped, alias_spec);
    auto r1 = coef_table(f1, "x1");
    auto r2 = coef_table(f2, "x1_alias");
    REQUIRE(r1.size() == 1);
    REQUIRE(r2.size() == 1);
    CHECK(r1[0].estimate == doctest::Approx(r2[0].estimate).epsilon(1e-12));
    CHECK(r1[0].se == doctest::Approx(r2[0].se).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(coef_table(f1, "nope"), doctest::Contains("TermNotFound"), Error);
}

TEST_CASE("fit serialization round trip") {
    PedDataset ped = ped_from_dgp("ic_weibull", 120, 67, 5);
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    spec.terms.push_back(smooth_term("t", 5));
    FittedPam f = fit(ped, spec);

    std::string dir = "/tmp/msmpam_fit_roundtrip";
    f.save(dir);
    FittedPam g = FittedPam::load(dir);
    CHECK((f.beta - g.beta).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((f.V - g.V).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(f.lambdas == g.lambdas);
    REQUIRE(g.blocks.size() == f.blocks.size());
    CHECK(g.blocks[1].basis.knots() == f.blocks[1].basis.knots());
    CHECK((g.blocks[1].Z - f.blocks[1].Z).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("multi-state design assembly matches the stratification structure") {
    SimulatedStudy study = generate_study(make_dgp("mts_tableA1"), 800, 71, 0);
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = 15;
    PedDataset ped = transform_to_ped(study.dataset, make_cuts(study.dataset, strat));

    // SSTS baseline: 4 intercepts + one smooth block per transition
    ModelSpec ssts = make_ssts_spec(ped.diagram, false, {}, SmoothSpec::Mode::Ps, 8);
    AssembledDesign d1 = assemble_design(ped, ssts);
    CHECK(d1.p == 4 + 4 * 7);

    // MTS baseline: intercepts + 2 blocks on t (trans_after_0) + 2 on t1
    ModelSpec mts = make_mts_spec(ped.diagram, false, {}, SmoothSpec::Mode::Ps, 8);
    AssembledDesign d2 = assemble_design(ped, mts);
    CHECK(d2.p == 4 + 2 * 7 + 2 * 7);

    // adding x1 by transition appends one column per transition
    SimulatedStudy study_x = generate_study(make_dgp("ssts_tableA1_x1"), 800, 73, 0);
    PedDataset ped_x = transform_to_ped(study_x.dataset, make_cuts(study_x.dataset, strat));
    ModelSpec with_x = make_ssts_spec(ped_x.diagram, false, {"x1"}, SmoothSpec::Mode::Ps, 8);
    AssembledDesign d3 = assemble_design(ped_x, with_x);
    CHECK(d3.p == 4 + 4 * 7 + 4);

    // full models with entry-time smooths assemble and stay full rank
    ModelSpec full_ssts = make_ssts_spec(ped.diagram, true, {}, SmoothSpec::Mode::Ps, 8);
    AssembledDesign d4 = assemble_design(ped, full_ssts);
    CHECK(d4.p == 4 + 4 * 7 + 2 * 7);
    ModelSpec full_mts = make_mts_spec(ped.diagram, true, {}, SmoothSpec::Mode::Ps, 8);
    AssembledDesign d5 = assemble_design(ped, full_mts);
    CHECK(d5.p == 4 + 2 * 7 + 2 * 7 + 2 * 7);
}

TEST_CASE("ps and fs fits of the same model produce close log-hazard curves") {
    SimulatedStudy study = generate_study(make_dgp("mts_tableA1"), 4000, 79, 0);
    CutStrategy strat;
    strat.kind = CutStrategy::Kind::Quantiles;
    strat.m = 30;
    PedDataset ped = transform_to_ped(study.dataset, make_cuts(study.dataset, strat));

    FittedPam ps = fit(ped, make_mts_spec(ped.diagram, true, {}, SmoothSpec::Mode::Ps, 10));
    FittedPam fs = fit(ped, make_mts_spec(ped.diagram, true, {}, SmoothSpec::Mode::Fs, 10));

    // Fitted log-hazard curves over the evaluation grid agree to within the
    // ps fit's pointwise standard error (baseline curves for the state-0
    // transitions, a mid-range entry slice for the post-onset ones).
    std::vector<double> ts;
    for (int i = 1; i <= 95; ++i) ts.push_back(0.1 * i);
    double max_rel = 0.0;
    for (int k = 0; k < ped.diagram.n_transitions(); ++k) {
        Profile profile;
        std::vector<double> grid = ts;
        if (ped.diagram.from_state(k) >= 1) {
            profile.state_entry[1] = 2.0;
            grid.clear();
            for (double t : ts)
                if (t >= 2.0) grid.push_back(t);
        }
        Frame frame = prediction_frame(ped.diagram, k, grid, profile);
        LogHazardPrediction pred_ps = predict_loghazard(ps, frame);
        LogHazardPrediction pred_fs = predict_loghazard(fs, frame);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            double gap = std::fabs(pred_ps.value[i] - pred_fs.value[i]);
            max_rel = std::max(max_rel, gap / std::max(pred_ps.se[i], 1e-9));
        }
    }
    CHECK(max_rel < 1.0);
}
