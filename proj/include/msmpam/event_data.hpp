#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace msmpam {

// Reserved to_state value marking a censored risk-set exit.
inline constexpr int kCensored = -1;
inline const std::string kCensoredToken = "cens";

// State diagram over states 0..D+n_R: a progression chain 0 -> 1 -> ... -> D
// plus terminal competing-risk states D+1..D+n_R reachable from every
// transient progression state. Transitions are indexed densely, grouped by
// from-state: (d -> d+1, d -> R1, d -> R2, ...) for d = 0..D-1.
class StateDiagram {
public:
    StateDiagram() = default;

    // Progressive chain of length D with n_risks terminal competing risks.
    static StateDiagram progressive(int D, int n_risks);

    // Explicit diagram; validates the invariants (dense transition indices,
    // from-states transient, derived transition sets partition).
    StateDiagram(int n_states, std::set<int> absorbing, std::vector<std::pair<int, int>> transitions,
                 std::vector<int> progression_chain, std::set<int> terminal_risks);

    int n_states() const { return n_states_; }
    int n_transitions() const { return static_cast<int>(transitions_.size()); }
    const std::vector<std::pair<int, int>>& transitions() const { return transitions_; }
    int from_state(int k) const { return transitions_[k].first; }
    int to_state(int k) const { return transitions_[k].second; }
    bool is_absorbing(int state) const { return absorbing_.count(state) > 0; }
    const std::set<int>& absorbing() const { return absorbing_; }
    const std::vector<int>& progression_chain() const { return progression_chain_; }
    const std::set<int>& terminal_risks() const { return terminal_risks_; }

    // Final progressive state D.
    int final_progression_state() const { return progression_chain_.back(); }

    // Transition index for (from, to), or -1.
    int transition_index(int from, int to) const;
    std::vector<int> transitions_from(int state) const;

    // k is a progression transition (to-state on the chain).
    bool is_progression(int k) const;

    // Set S_dD: progression transitions out of state >= d.
    std::vector<int> progression_set(int d) const;
    // Set S_dR: transitions into terminal risk R out of state >= d.
    std::vector<int> risk_set(int d, int risk) const;

    std::string transition_label(int k) const;

private:
    void check_invariants() const;
    int n_states_ = 0;
    std::set<int> absorbing_;
    std::vector<std::pair<int, int>> transitions_;
    std::vector<int> progression_chain_;
    std::set<int> terminal_risks_;
};

struct CovariateSchema {
    enum class Kind { Numeric, Categorical };
    struct Field {
        std::string name;
        Kind kind = Kind::Numeric;
        std::vector<std::string> levels;  // categorical only
    };
    std::vector<Field> fields;

    const Field* find(const std::string& name) const;
};

// One risk-set episode: the subject occupied `from_state` on
// (t_entry, t_exit] and exited by transitioning to `to_state` or by
// censoring (to_state == kCensored).
struct TransitionRecord {
    std::string subject_id;
    int from_state = 0;
    int to_state = kCensored;
    double t_entry = 0.0;
    double t_exit = 0.0;
    std::vector<double> numeric_covariates;  // aligned with schema numeric order
    std::vector<int> categorical_covariates; // level codes, schema categorical order
};

struct RecordIssue {
    std::size_t record_index;
    std::string code;
    std::string message;
};

class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<TransitionRecord> records, StateDiagram diagram, CovariateSchema schema)
        : records_(std::move(records)), diagram_(std::move(diagram)), schema_(std::move(schema)) {}

    const std::vector<TransitionRecord>& records() const { return records_; }
    const StateDiagram& diagram() const { return diagram_; }
    const CovariateSchema& schema() const { return schema_; }

    // Subject ids in first-appearance order with per-subject record indices
    // (chronological).
    const std::vector<std::string>& subject_ids() const { return subject_ids_; }
    const std::vector<std::vector<std::size_t>>& subject_episodes() const { return subject_episodes_; }

    void index_subjects();

private:
    std::vector<TransitionRecord> records_;
    StateDiagram diagram_;
    CovariateSchema schema_;
    std::vector<std::string> subject_ids_;
    std::vector<std::vector<std::size_t>> subject_episodes_;
};

// Validates records against the diagram and schema; throws
// Error("ValidationFailed") listing per-record diagnostics when any record
// is rejected (codes: NonPositiveDuration, IllegalTransition, BrokenHistory,
// SchemaMismatch).
Dataset validate_dataset(std::vector<TransitionRecord> records, const StateDiagram& diagram,
                         const CovariateSchema& schema);

// Collects diagnostics without throwing; records pass/fail flags by index.
std::vector<RecordIssue> dataset_diagnostics(const std::vector<TransitionRecord>& records,
                                             const StateDiagram& diagram, const CovariateSchema& schema);

// CSV interchange: header `subject_id,from_state,to_state,t_entry,t_exit`
// plus one column per schema covariate; to_state value `cens` marks
// censoring.
Dataset read_transitions_csv(const std::string& path, const StateDiagram& diagram, const CovariateSchema& schema);
void write_transitions_csv(const Dataset& dataset, const std::string& path);

// JSON round trip for the dataset sidecar (diagram + schema).
std::string diagram_to_json_string(const StateDiagram& diagram);
StateDiagram diagram_from_json_string(const std::string& text);
std::string schema_to_json_string(const CovariateSchema& schema);
CovariateSchema schema_from_json_string(const std::string& text);

}  // namespace msmpam
