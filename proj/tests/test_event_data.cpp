#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "msmpam/error.hpp"
#include "msmpam/event_data.hpp"

using namespace msmpam;

namespace {

// Fig.-3-style simulation diagram: 0 -> 1 -> 2, competing risk 3.
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

TEST_CASE("progressive diagram structure") {
    StateDiagram d = sim_diagram();
    CHECK(d.n_states() == 4);
    CHECK(d.n_transitions() == 4);
    CHECK(d.transition_index(0, 1) == 0);
    CHECK(d.transition_index(0, 3) == 1);
    CHECK(d.transition_index(1, 2) == 2);
    CHECK(d.transition_index(1, 3) == 3);
    CHECK(d.transition_index(0, 2) == -1);
    CHECK(d.is_absorbing(2));
    CHECK(d.is_absorbing(3));

    // S_dD / S_dR partition the transition set at every d.
    auto s0d = d.progression_set(0);
    auto s0r = d.risk_set(0, 3);
    CHECK(s0d == std::vector<int>{0, 2});
    CHECK(s0r == std::vector<int>{1, 3});
    CHECK(d.progression_set(1) == std::vector<int>{2});
    CHECK(d.risk_set(1, 3) == std::vector<int>{3});
    CHECK(s0d.size() + s0r.size() == 4);
}

TEST_CASE("validate_dataset accepts a legal record") {
    auto ds = validate_dataset({rec("1", 0, 1, 0.0, 2.5)}, sim_diagram(), {});
    CHECK(ds.records().size() == 1);
}

TEST_CASE("validate_dataset rejects an illegal transition") {
    CHECK_THROWS_WITH_AS(validate_dataset({rec("1", 0, 2, 0.0, 2.5)}, sim_diagram(), {}),
                         doctest::Contains("IllegalTransition"), Error);
}

TEST_CASE("validate_dataset rejects zero-length episodes") {
    CHECK_THROWS_WITH_AS(validate_dataset({rec("1", 0, 1, 1.0, 1.0)}, sim_diagram(), {}),
                         doctest::Contains("NonPositiveDuration"), Error);
}

TEST_CASE("validate_dataset rejects broken histories") {
    // gap between exit and next entry
    CHECK_THROWS_WITH_AS(
        validate_dataset({rec("1", 0, 1, 0.0, 2.0), rec("1", 1, 3, 2.5, 4.0)}, sim_diagram(), {}),
        doctest::Contains("BrokenHistory"), Error);
    // wrong continuation state
    CHECK_THROWS_WITH_AS(
        validate_dataset({rec("1", 0, 3, 0.0, 2.0), rec("1", 1, 2, 2.0, 4.0)}, sim_diagram(), {}),
        doctest::Contains("BrokenHistory"), Error);
    // does not start in state 0
    CHECK_THROWS_WITH_AS(validate_dataset({rec("1", 1, 2, 1.0, 2.0)}, sim_diagram(), {}),
                         doctest::Contains("BrokenHistory"), Error);
}

TEST_CASE("diagnostics report all issues per record") {
    auto issues = dataset_diagnostics({rec("1", 0, 2, 1.0, 1.0)}, sim_diagram(), {});
    CHECK(issues.size() >= 2);  // NonPositiveDuration + IllegalTransition
}

TEST_CASE("subject trajectories form a path in the diagram from state 0") {
    auto ds = validate_dataset(
        {rec("a", 0, 1, 0.0, 2.0), rec("a", 1, 3, 2.0, 5.0), rec("b", 0, kCensored, 0.0, 7.0)}, sim_diagram(),
        {});
    CHECK(ds.subject_ids() == std::vector<std::string>{"a", "b"});
    for (std::size_t s = 0; s < ds.subject_ids().size(); ++s) {
        const auto& eps = ds.subject_episodes()[s];
        int state = 0;
        for (std::size_t idx : eps) {
            const auto& r = ds.records()[idx];
            CHECK(r.from_state == state);
            if (r.to_state != kCensored) {
                CHECK(ds.diagram().transition_index(r.from_state, r.to_state) >= 0);
                state = r.to_state;
            }
        }
    }
}

TEST_CASE("csv round trip is identity on validated datasets") {
    CovariateSchema schema;
    schema.fields.push_back({"x1", CovariateSchema::Kind::Numeric, {}});
    schema.fields.push_back({"grp", CovariateSchema::Kind::Categorical, {"lo", "hi"}});
    auto make = [&](const std::string& id, int from, int to, double a, double b, double x, int g) {
        TransitionRecord r = rec(id, from, to, a, b);
        r.numeric_covariates = {x};
        r.categorical_covariates = {g};
        return r;
    };
    auto ds = validate_dataset({make("1", 0, 1, 0.0, 2.5, 0.1234567890123, 0),
                                make("1", 1, 3, 2.5, 7.25, 0.1234567890123, 0),
                                make("2", 0, kCensored, 0.0, 9.99, -1.5, 1)},
                               sim_diagram(), schema);

    std::string path = (std::filesystem::temp_directory_path() / "msmpam_roundtrip.csv").string();
    write_transitions_csv(ds, path);
    Dataset back = read_transitions_csv(path, sim_diagram(), schema);
    REQUIRE(back.records().size() == ds.records().size());
    for (std::size_t i = 0; i < ds.records().size(); ++i) {
        CHECK(back.records()[i].subject_id == ds.records()[i].subject_id);
        CHECK(back.records()[i].from_state == ds.records()[i].from_state);
        CHECK(back.records()[i].to_state == ds.records()[i].to_state);
        CHECK(back.records()[i].t_entry == ds.records()[i].t_entry);
        CHECK(back.records()[i].t_exit == ds.records()[i].t_exit);
        CHECK(back.records()[i].numeric_covariates == ds.records()[i].numeric_covariates);
        CHECK(back.records()[i].categorical_covariates == ds.records()[i].categorical_covariates);
    }
    std::remove(path.c_str());
}

TEST_CASE("csv errors: missing column and undeclared level") {
    namespace fs = std::filesystem;
    std::string path = (fs::temp_directory_path() / "msmpam_bad.csv").string();
    {
        FILE* f = fopen(path.c_str(), "w");
        fputs("subject_id,from_state,t_entry,t_exit\n1,0,0,1\n", f);
        fclose(f);
    }
    CHECK_THROWS_WITH_AS(read_transitions_csv(path, sim_diagram(), {}), doctest::Contains("MissingColumn"),
                         Error);
    {
        FILE* f = fopen(path.c_str(), "w");
        fputs("subject_id,from_state,to_state,t_entry,t_exit,grp\n1,0,1,0,1,weird\n", f);
        fclose(f);
    }
    CovariateSchema schema;
    schema.fields.push_back({"grp", CovariateSchema::Kind::Categorical, {"lo", "hi"}});
    CHECK_THROWS_WITH_AS(read_transitions_csv(path, sim_diagram(), schema),
                         doctest::Contains("SchemaMismatch"), Error);
    std::remove(path.c_str());
}
