#include "msmpam/event_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "msmpam/csv.hpp"
#include "msmpam/error.hpp"

namespace msmpam {

StateDiagram StateDiagram::progressive(int D, int n_risks) {
    if (D < 1 || n_risks < 0) fail_usage("BadArgument", "progressive diagram needs D >= 1, n_risks >= 0");
    int n_states = D + 1 + n_risks;
    std::set<int> absorbing;
    absorbing.insert(D);
    std::set<int> risks;
    for (int r = D + 1; r <= D + n_risks; ++r) {
        absorbing.insert(r);
        risks.insert(r);
    }
    std::vector<std::pair<int, int>> transitions;
    for (int d = 0; d < D; ++d) {
        transitions.emplace_back(d, d + 1);
        for (int r : risks) transitions.emplace_back(d, r);
    }
    std::vector<int> chain(D + 1);
    for (int d = 0; d <= D; ++d) chain[d] = d;
    return StateDiagram(n_states, std::move(absorbing), std::move(transitions), std::move(chain), std::move(risks));
}

StateDiagram::StateDiagram(int n_states, std::set<int> absorbing, std::vector<std::pair<int, int>> transitions,
                           std::vector<int> progression_chain, std::set<int> terminal_risks)
    : n_states_(n_states),
      absorbing_(std::move(absorbing)),
      transitions_(std::move(transitions)),
      progression_chain_(std::move(progression_chain)),
      terminal_risks_(std::move(terminal_risks)) {
    check_invariants();
}

void StateDiagram::check_invariants() const {
    if (transitions_.empty()) fail_usage("BadDiagram", "no transitions");
    if (progression_chain_.empty()) fail_usage("BadDiagram", "empty progression chain");
    std::set<std::pair<int, int>> seen;
    for (const auto& [from, to] : transitions_) {
        if (from < 0 || from >= n_states_ || to < 0 || to >= n_states_)
            fail_usage("BadDiagram", "transition references undeclared state");
        if (absorbing_.count(from)) fail_usage("BadDiagram", "transition out of absorbing state");
        if (!seen.insert({from, to}).second) fail_usage("BadDiagram", "duplicate transition");
    }
    // S_dD and the S_dR must partition the full transition set for every d;
    // checked at d = 0, where the union must be everything.
    std::set<int> covered;
    for (int k : progression_set(0)) covered.insert(k);
    for (int r : terminal_risks_)
        for (int k : risk_set(0, r)) {
            if (!covered.insert(k).second) fail_usage("BadDiagram", "transition sets overlap");
        }
    if (static_cast<int>(covered.size()) != n_transitions())
        fail_usage("BadDiagram", "progression/risk sets do not partition the transitions");
}

int StateDiagram::transition_index(int from, int to) const {
    for (std::size_t k = 0; k < transitions_.size(); ++k)
        if (transitions_[k].first == from && transitions_[k].second == to) return static_cast<int>(k);
    return -1;
}

std::vector<int> StateDiagram::transitions_from(int state) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < transitions_.size(); ++k)
        if (transitions_[k].first == state) out.push_back(static_cast<int>(k));
    return out;
}

bool StateDiagram::is_progression(int k) const {
    int to = transitions_[k].second;
    return std::find(progression_chain_.begin(), progression_chain_.end(), to) != progression_chain_.end();
}

std::vector<int> StateDiagram::progression_set(int d) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < transitions_.size(); ++k)
        if (transitions_[k].first >= d && is_progression(static_cast<int>(k))) out.push_back(static_cast<int>(k));
    return out;
}

std::vector<int> StateDiagram::risk_set(int d, int risk) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < transitions_.size(); ++k)
        if (transitions_[k].first >= d && transitions_[k].second == risk) out.push_back(static_cast<int>(k));
    return out;
}

std::string StateDiagram::transition_label(int k) const {
    return std::to_string(transitions_[k].first) + "->" + std::to_string(transitions_[k].second);
}

const CovariateSchema::Field* CovariateSchema::find(const std::string& name) const {
    for (const auto& f : fields)
        if (f.name == name) return &f;
    return nullptr;
}

void Dataset::index_subjects() {
    subject_ids_.clear();
    subject_episodes_.clear();
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        auto [it, inserted] = index.try_emplace(records_[i].subject_id, subject_ids_.size());
        if (inserted) {
            subject_ids_.push_back(records_[i].subject_id);
            subject_episodes_.emplace_back();
        }
        subject_episodes_[it->second].push_back(i);
    }
    // Chronological order within subject.
    for (auto& eps : subject_episodes_)
        std::sort(eps.begin(), eps.end(),
                  [&](std::size_t a, std::size_t b) { return records_[a].t_entry < records_[b].t_entry; });
}

std::vector<RecordIssue> dataset_diagnostics(const std::vector<TransitionRecord>& records,
                                             const StateDiagram& diagram, const CovariateSchema& schema) {
    std::vector<RecordIssue> issues;
    std::size_t n_num = 0, n_cat = 0;
    for (const auto& f : schema.fields)
        (f.kind == CovariateSchema::Kind::Numeric ? n_num : n_cat) += 1;

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!(r.t_exit > r.t_entry) || r.t_entry < 0.0)
            issues.push_back({i, "NonPositiveDuration",
                              "t_exit (" + format_double(r.t_exit) + ") must exceed t_entry (" +
                                  format_double(r.t_entry) + ")"});
        if (r.to_state != kCensored && diagram.transition_index(r.from_state, r.to_state) < 0)
            issues.push_back({i, "IllegalTransition",
                              "no transition " + std::to_string(r.from_state) + "->" + std::to_string(r.to_state) +
                                  " in the diagram"});
        else if (r.to_state == kCensored &&
                 (r.from_state < 0 || r.from_state >= diagram.n_states() || diagram.is_absorbing(r.from_state)))
            issues.push_back({i, "IllegalTransition", "censoring from a non-transient state"});
        if (r.numeric_covariates.size() != n_num || r.categorical_covariates.size() != n_cat)
            issues.push_back({i, "SchemaMismatch", "covariate count does not match the schema"});
        std::size_t ci = 0;
        for (const auto& f : schema.fields) {
            if (f.kind != CovariateSchema::Kind::Categorical) continue;
            if (ci < r.categorical_covariates.size()) {
                int code = r.categorical_covariates[ci];
                if (code < 0 || code >= static_cast<int>(f.levels.size()))
                    issues.push_back({i, "SchemaMismatch", "'" + f.name + "' level code out of range"});
            }
            ++ci;
        }
    }

    // Per-subject chronology: exit of one episode equals entry of the next,
    // from-states follow the observed transitions, histories start in state 0.
    std::unordered_map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < records.size(); ++i) by_subject[records[i].subject_id].push_back(i);
    for (auto& [id, idxs] : by_subject) {
        std::sort(idxs.begin(), idxs.end(),
                  [&](std::size_t a, std::size_t b) { return records[a].t_entry < records[b].t_entry; });
        const TransitionRecord* prev = nullptr;
        for (std::size_t idx : idxs) {
            const auto& r = records[idx];
            if (!prev) {
                if (r.from_state != 0)
                    issues.push_back({idx, "BrokenHistory", "subject '" + id + "' does not start in state 0"});
            } else {
                if (prev->to_state == kCensored || diagram.is_absorbing(prev->to_state))
                    issues.push_back({idx, "BrokenHistory", "subject '" + id + "' has episodes after exit"});
                else if (r.from_state != prev->to_state)
                    issues.push_back({idx, "BrokenHistory", "subject '" + id + "' jumps states between episodes"});
                if (std::fabs(r.t_entry - prev->t_exit) > 0.0)
                    issues.push_back({idx, "BrokenHistory", "subject '" + id + "' has a gap or overlap at t=" +
                                                                format_double(r.t_entry)});
            }
            prev = &r;
        }
    }
    std::sort(issues.begin(), issues.end(),
              [](const RecordIssue& a, const RecordIssue& b) { return a.record_index < b.record_index; });
    return issues;
}

Dataset validate_dataset(std::vector<TransitionRecord> records, const StateDiagram& diagram,
                         const CovariateSchema& schema) {
    if (records.empty()) fail_data("EmptyDataset", "no records");
    auto issues = dataset_diagnostics(records, diagram, schema);
    if (!issues.empty()) {
        std::ostringstream msg;
        msg << issues.size() << " invalid record(s):";
        std::size_t shown = 0;
        for (const auto& iss : issues) {
            if (shown++ == 20) {
                msg << " ...";
                break;
            }
            msg << "\n  record " << iss.record_index << " [" << iss.code << "] " << iss.message;
        }
        fail_data(issues.front().code, msg.str());
    }
    Dataset ds(std::move(records), diagram, schema);
    ds.index_subjects();
    return ds;
}

Dataset read_transitions_csv(const std::string& path, const StateDiagram& diagram, const CovariateSchema& schema) {
    CsvTable table = read_csv(path);
    int c_id = table.require_column("subject_id");
    int c_from = table.require_column("from_state");
    int c_to = table.require_column("to_state");
    int c_entry = table.require_column("t_entry");
    int c_exit = table.require_column("t_exit");
    std::vector<int> cov_cols;
    for (const auto& f : schema.fields) cov_cols.push_back(table.require_column(f.name));

    std::vector<TransitionRecord> records;
    records.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        std::size_t line_no = i + 2;
        TransitionRecord r;
        r.subject_id = row[c_id];
        r.from_state = static_cast<int>(parse_long(row[c_from], line_no));
        r.to_state = (row[c_to] == kCensoredToken) ? kCensored
                                                   : static_cast<int>(parse_long(row[c_to], line_no));
        r.t_entry = parse_double(row[c_entry], line_no);
        r.t_exit = parse_double(row[c_exit], line_no);
        std::size_t fi = 0;
        for (const auto& f : schema.fields) {
            const std::string& cell = row[cov_cols[fi++]];
            if (f.kind == CovariateSchema::Kind::Numeric) {
                r.numeric_covariates.push_back(parse_double(cell, line_no));
            } else {
                auto it = std::find(f.levels.begin(), f.levels.end(), cell);
                if (it == f.levels.end())
                    fail_data("SchemaMismatch", "line " + std::to_string(line_no) + ": '" + cell +
                                                    "' is not a declared level of '" + f.name + "'");
                r.categorical_covariates.push_back(static_cast<int>(it - f.levels.begin()));
            }
        }
        records.push_back(std::move(r));
    }
    return validate_dataset(std::move(records), diagram, schema);
}

void write_transitions_csv(const Dataset& dataset, const std::string& path) {
    CsvTable table;
    table.header = {"subject_id", "from_state", "to_state", "t_entry", "t_exit"};
    for (const auto& f : dataset.schema().fields) table.header.push_back(f.name);
    for (const auto& r : dataset.records()) {
        std::vector<std::string> row{r.subject_id, std::to_string(r.from_state),
                                     r.to_state == kCensored ? kCensoredToken : std::to_string(r.to_state),
                                     format_double(r.t_entry), format_double(r.t_exit)};
        std::size_t ni = 0, ci = 0;
        for (const auto& f : dataset.schema().fields) {
            if (f.kind == CovariateSchema::Kind::Numeric)
                row.push_back(format_double(r.numeric_covariates[ni++]));
            else
                row.push_back(f.levels[r.categorical_covariates[ci++]]);
        }
        table.rows.push_back(std::move(row));
    }
    write_csv(path, table);
}

}  // namespace msmpam

namespace msmpam {

using nlohmann::json;

std::string diagram_to_json_string(const StateDiagram& diagram) {
    json j;
    j["n_states"] = diagram.n_states();
    j["absorbing"] = std::vector<int>(diagram.absorbing().begin(), diagram.absorbing().end());
    j["progression_chain"] = diagram.progression_chain();
    j["terminal_risks"] = std::vector<int>(diagram.terminal_risks().begin(), diagram.terminal_risks().end());
    json trans = json::array();
    for (const auto& [from, to] : diagram.transitions()) trans.push_back({from, to});
    j["transitions"] = trans;
    return j.dump(2);
}

StateDiagram diagram_from_json_string(const std::string& text) {
    json j = json::parse(text);
    std::vector<std::pair<int, int>> transitions;
    for (const auto& t : j.at("transitions")) transitions.emplace_back(t.at(0).get<int>(), t.at(1).get<int>());
    std::vector<int> abs_v = j.at("absorbing").get<std::vector<int>>();
    std::vector<int> risks_v = j.at("terminal_risks").get<std::vector<int>>();
    return StateDiagram(j.at("n_states").get<int>(), std::set<int>(abs_v.begin(), abs_v.end()),
                        std::move(transitions), j.at("progression_chain").get<std::vector<int>>(),
                        std::set<int>(risks_v.begin(), risks_v.end()));
}

std::string schema_to_json_string(const CovariateSchema& schema) {
    json arr = json::array();
    for (const auto& f : schema.fields) {
        json jf;
        jf["name"] = f.name;
        jf["kind"] = f.kind == CovariateSchema::Kind::Numeric ? "numeric" : "categorical";
        if (f.kind == CovariateSchema::Kind::Categorical) jf["levels"] = f.levels;
        arr.push_back(std::move(jf));
    }
    return arr.dump(2);
}

CovariateSchema schema_from_json_string(const std::string& text) {
    json arr = json::parse(text);
    CovariateSchema schema;
    for (const auto& jf : arr) {
        CovariateSchema::Field f;
        f.name = jf.at("name").get<std::string>();
        f.kind = jf.at("kind").get<std::string>() == "numeric" ? CovariateSchema::Kind::Numeric
                                                               : CovariateSchema::Kind::Categorical;
        if (f.kind == CovariateSchema::Kind::Categorical) f.levels = jf.at("levels").get<std::vector<std::string>>();
        schema.fields.push_back(std::move(f));
    }
    return schema;
}

}  // namespace msmpam
