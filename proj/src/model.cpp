#include "msmpam/model.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "msmpam/error.hpp"

namespace msmpam {

using nlohmann::json;

void ModelSpec::check() const {
    int n_intercepts = 0;
    for (const auto& t : terms)
        if (t.kind == ModelTerm::Kind::TransitionIntercepts) ++n_intercepts;
    if (n_intercepts != 1) fail_usage("BadModelSpec", "exactly one transition_intercepts term required");
}

namespace {

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.response = j.value("response", std::string("d"));
    spec.offset = j.value("offset", std::string("offset"));
    spec.weights = j.value("weights", std::string());
    for (const auto& jt : j.at("terms")) {
        ModelTerm term;
        std::string type = jt.at("type").get<std::string>();
        if (type == "transition_intercepts") {
            term.kind = ModelTerm::Kind::TransitionIntercepts;
        } else if (type == "linear") {
            term.kind = ModelTerm::Kind::Linear;
            term.column = jt.at("column").get<std::string>();
            term.by = jt.value("by", std::string());
        } else if (type == "smooth") {
            term.kind = ModelTerm::Kind::Smooth;
            term.smooth.variable = jt.at("column").get<std::string>();
            term.smooth.by = jt.value("by", std::string());
            term.smooth.k = jt.value("k", 20);
            term.smooth.degree = jt.value("degree", 3);
            term.smooth.penalty_order = jt.value("penalty_order", 2);
            std::string mode = jt.value("mode", std::string("ps"));
            if (mode == "ps")
                term.smooth.mode = SmoothSpec::Mode::Ps;
            else if (mode == "fs")
                term.smooth.mode = SmoothSpec::Mode::Fs;
            else
                fail_usage("BadModelSpec", "smooth mode must be 'ps' or 'fs'");
            if (jt.contains("knots")) term.smooth.explicit_knots = jt.at("knots").get<std::vector<double>>();
        } else {
            fail_usage("BadModelSpec", "unknown term type '" + type + "'");
        }
        spec.terms.push_back(std::move(term));
    }
    spec.check();
    return spec;
}

}  // namespace

ModelSpec ModelSpec::from_json_string(const std::string& text) { return spec_from_json(json::parse(text)); }

ModelSpec ModelSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_data("FileNotFound", "cannot open '" + path + "'");
    return spec_from_json(json::parse(in));
}

std::string ModelSpec::to_json_string() const {
    json j;
    j["response"] = response;
    j["offset"] = offset;
    if (!weights.empty()) j["weights"] = weights;
    json terms_j = json::array();
    for (const auto& t : terms) {
        json jt;
        switch (t.kind) {
            case ModelTerm::Kind::TransitionIntercepts:
                jt["type"] = "transition_intercepts";
                break;
            case ModelTerm::Kind::Linear:
                jt["type"] = "linear";
                jt["column"] = t.column;
                if (!t.by.empty()) jt["by"] = t.by;
                break;
            case ModelTerm::Kind::Smooth:
                jt["type"] = "smooth";
                jt["column"] = t.smooth.variable;
                if (!t.smooth.by.empty()) jt["by"] = t.smooth.by;
                jt["k"] = t.smooth.k;
                jt["degree"] = t.smooth.degree;
                jt["penalty_order"] = t.smooth.penalty_order;
                jt["mode"] = t.smooth.mode == SmoothSpec::Mode::Ps ? "ps" : "fs";
                if (!t.smooth.explicit_knots.empty()) jt["knots"] = t.smooth.explicit_knots;
                break;
        }
        terms_j.push_back(std::move(jt));
    }
    j["terms"] = std::move(terms_j);
    return j.dump(2);
}

Eigen::VectorXd AssembledDesign::expand_to_raw(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd raw = Eigen::VectorXd::Zero(p_raw);
    for (const auto& b : blocks) {
        if (b.Z.size() > 0)
            raw.segment(b.raw_offset, b.raw_cols) = b.Z * beta.segment(b.col_offset, b.n_cols);
        else
            raw.segment(b.raw_offset, b.raw_cols) = beta.segment(b.col_offset, b.n_cols);
    }
    return raw;
}

Eigen::VectorXd AssembledDesign::fold_from_raw(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
    for (const auto& b : blocks) {
        if (b.Z.size() > 0)
            out.segment(b.col_offset, b.n_cols) = b.Z.transpose() * raw.segment(b.raw_offset, b.raw_cols);
        else
            out.segment(b.col_offset, b.n_cols) = raw.segment(b.raw_offset, b.raw_cols);
    }
    return out;
}

Eigen::MatrixXd AssembledDesign::fold_gram(const Eigen::MatrixXd& gram_raw) const {
    Eigen::MatrixXd T(p_raw, p);
    for (const auto& b : blocks) {
        if (b.Z.size() > 0)
            T.middleCols(b.col_offset, b.n_cols) = gram_raw.middleCols(b.raw_offset, b.raw_cols) * b.Z;
        else
            T.middleCols(b.col_offset, b.n_cols) = gram_raw.middleCols(b.raw_offset, b.raw_cols);
    }
    Eigen::MatrixXd G(p, p);
    for (const auto& b : blocks) {
        if (b.Z.size() > 0)
            G.middleRows(b.col_offset, b.n_cols) = b.Z.transpose() * T.middleRows(b.raw_offset, b.raw_cols);
        else
            G.middleRows(b.col_offset, b.n_cols) = T.middleRows(b.raw_offset, b.raw_cols);
    }
    return G;
}

Eigen::MatrixXd AssembledDesign::penalty_matrix(const Eigen::VectorXd& lambdas) const {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (int bi : groups[g].blocks) {
            const auto& b = blocks[bi];
            S.block(b.col_offset, b.col_offset, b.n_cols, b.n_cols) += lambdas[g] * b.penalty;
        }
    return S;
}

Eigen::VectorXd AssembledDesign::linear_predictor(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd raw = expand_to_raw(beta);
    Eigen::VectorXd eta(y.size());
    for (std::size_t i = 0; i < n_rows(); ++i) {
        double acc = 0.0;
        for (int idx = row_ptr[i]; idx < row_ptr[i + 1]; ++idx) acc += values[idx] * raw[col_idx[idx]];
        eta[i] = acc;
    }
    return eta;
}

namespace {

bool is_helper_column(const std::string& name) { return name.rfind("trans_after_", 0) == 0; }

}  // namespace

AssembledDesign assemble_design(const PedDataset& ped, const ModelSpec& spec, const Eigen::VectorXd* weights) {
    spec.check();
    const Frame& f = ped.frame;
    const std::size_t n = f.n_rows();
    const auto& trans = f.cat("transition");
    const auto& trans_levels = f.col("transition").levels;
    const int q = static_cast<int>(trans_levels.size());

    AssembledDesign d;
    int raw_off = 0, col_off = 0;

    auto add_block = [&](DesignBlock block) {
        block.raw_offset = raw_off;
        block.col_offset = col_off;
        raw_off += block.raw_cols;
        col_off += block.n_cols;
        d.blocks.push_back(std::move(block));
    };

    for (const auto& term : spec.terms) {
        switch (term.kind) {
            case ModelTerm::Kind::TransitionIntercepts: {
                DesignBlock b;
                b.kind = DesignBlock::Kind::Intercepts;
                b.label = "transition";
                b.by_column = "transition";
                b.raw_cols = b.n_cols = q;
                for (const auto& l : trans_levels) b.col_labels.push_back(l);
                add_block(std::move(b));
                break;
            }
            case ModelTerm::Kind::Linear: {
                const Column& xc = f.col(term.column);
                if (xc.kind != Column::Kind::Numeric)
                    fail_usage("BadModelSpec", "linear term '" + term.column + "' must be numeric");
                DesignBlock b;
                b.kind = DesignBlock::Kind::Linear;
                b.x_column = term.column;
                b.by_column = term.by;
                if (term.by.empty()) {
                    b.label = term.column;
                    b.raw_cols = b.n_cols = 1;
                    b.col_labels = {term.column};
                } else {
                    const Column& byc = f.col(term.by);
                    if (byc.kind != Column::Kind::Categorical)
                        fail_usage("BadModelSpec", "by column '" + term.by + "' must be categorical");
                    b.label = term.column + ":" + term.by;
                    b.raw_cols = b.n_cols = static_cast<int>(byc.levels.size());
                    b.by_levels = byc.levels;
                    for (const auto& l : byc.levels) b.col_labels.push_back(term.column + ":" + l);
                }
                add_block(std::move(b));
                break;
            }
            case ModelTerm::Kind::Smooth: {
                SmoothSpec ss = term.smooth;
                const auto& x = f.num(ss.variable);
                std::vector<int> by_codes;
                std::vector<std::string> by_levels;
                int none_level = -1;
                if (!ss.by.empty()) {
                    const Column& byc = f.col(ss.by);
                    if (byc.kind != Column::Kind::Categorical)
                        fail_usage("BadModelSpec", "by column '" + ss.by + "' must be categorical");
                    if (is_helper_column(ss.by) && byc.none_level < 0)
                        fail_data("MissingNoneLevel",
                                  "helper '" + ss.by + "' lacks the declared reference level 'none'");
                    by_codes = byc.codes;
                    by_levels = byc.levels;
                    none_level = byc.none_level;
                }
                auto basis_blocks = stratified_smooth(x, by_codes, by_levels, none_level, ss);
                int group = -1;
                if (ss.mode == SmoothSpec::Mode::Fs) {
                    group = static_cast<int>(d.groups.size());
                    d.groups.push_back({"s(" + ss.variable + ")" + (ss.by.empty() ? "" : ":" + ss.by), {}});
                }
                for (auto& bb : basis_blocks) {
                    DesignBlock b;
                    b.kind = DesignBlock::Kind::Smooth;
                    b.label = bb.label;
                    b.x_column = ss.variable;
                    b.by_column = ss.by;
                    b.by_level = bb.by_level;
                    if (bb.by_level >= 0) b.by_level_name = by_levels[bb.by_level];
                    b.basis = bb.basis;
                    b.Z = std::move(bb.Z);
                    b.penalty = std::move(bb.penalty);
                    b.raw_cols = b.basis.n_basis();
                    b.n_cols = bb.n_cols;
                    if (ss.mode == SmoothSpec::Mode::Fs) {
                        b.lambda_group = group;
                        d.groups[group].blocks.push_back(static_cast<int>(d.blocks.size()));
                    } else {
                        b.lambda_group = static_cast<int>(d.groups.size());
                        d.groups.push_back({bb.label, {static_cast<int>(d.blocks.size())}});
                    }
                    add_block(std::move(b));
                }
                break;
            }
        }
    }
    d.p_raw = raw_off;
    d.p = col_off;

    // CSR rows over the raw columns.
    d.row_ptr.assign(n + 1, 0);
    std::vector<std::pair<int, double>> entries;
    entries.reserve(16);
    d.col_idx.reserve(n * 8);
    d.values.reserve(n * 8);
    double vals[8];
    for (std::size_t i = 0; i < n; ++i) {
        entries.clear();
        for (const auto& b : d.blocks) {
            switch (b.kind) {
                case DesignBlock::Kind::Intercepts:
                    entries.emplace_back(b.raw_offset + trans[i], 1.0);
                    break;
                case DesignBlock::Kind::Linear: {
                    double xv = f.num(b.x_column)[i];
                    if (xv == 0.0) break;
                    if (b.by_column.empty())
                        entries.emplace_back(b.raw_offset, xv);
                    else {
                        const Column& byc = f.col(b.by_column);
                        int code = byc.codes[i];
                        if (code != byc.none_level) entries.emplace_back(b.raw_offset + code, xv);
                    }
                    break;
                }
                case DesignBlock::Kind::Smooth: {
                    if (b.by_level >= 0 && f.cat(b.by_column)[i] != b.by_level) break;
                    int first = b.basis.eval(f.num(b.x_column)[i], vals);
                    for (int r = 0; r <= b.basis.degree(); ++r)
                        entries.emplace_back(b.raw_offset + first + r, vals[r]);
                    break;
                }
            }
        }
        for (const auto& [c, v] : entries) {
            d.col_idx.push_back(c);
            d.values.push_back(v);
        }
        d.row_ptr[i + 1] = static_cast<int>(d.col_idx.size());
    }

    const auto& yv = f.num(spec.response);
    const auto& ov = f.num(spec.offset);
    d.y = Eigen::Map<const Eigen::VectorXd>(yv.data(), yv.size());
    d.offset = Eigen::Map<const Eigen::VectorXd>(ov.data(), ov.size());
    if (weights) {
        if (weights->size() != static_cast<Eigen::Index>(n)) fail_usage("BadArgument", "weights length mismatch");
        d.prior_weights = *weights;
    } else if (!spec.weights.empty()) {
        const auto& wv = f.num(spec.weights);
        d.prior_weights = Eigen::Map<const Eigen::VectorXd>(wv.data(), wv.size());
    } else {
        d.prior_weights = Eigen::VectorXd::Ones(n);
    }
    for (Eigen::Index i = 0; i < d.prior_weights.size(); ++i)
        if (!(d.prior_weights[i] >= 0.0)) fail_usage("BadArgument", "negative prior weight");

    // Unpenalized rank check for ps-mode designs: rank deficiency signals a
    // mis-specified helper variable. fs designs are identified through the
    // penalty, not the unpenalized design, so they are exempt.
    bool any_fs = false;
    for (const auto& b : d.blocks)
        if (b.kind == DesignBlock::Kind::Smooth && b.Z.size() == 0) any_fs = true;
    if (!any_fs) {
        Eigen::MatrixXd gram_raw = Eigen::MatrixXd::Zero(d.p_raw, d.p_raw);
        for (std::size_t i = 0; i < n; ++i)
            for (int a = d.row_ptr[i]; a < d.row_ptr[i + 1]; ++a)
                for (int b2 = d.row_ptr[i]; b2 <= a; ++b2)
                    gram_raw(d.col_idx[a], d.col_idx[b2]) += d.values[a] * d.values[b2];
        gram_raw = gram_raw.selfadjointView<Eigen::Lower>();
        Eigen::MatrixXd G = d.fold_gram(gram_raw);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
        double max_ev = eig.eigenvalues().maxCoeff();
        if (eig.eigenvalues().minCoeff() < 1e-10 * max_ev)
            fail_numeric("RankDeficiency", "design matrix is rank deficient (min/max eigenvalue ratio " +
                                               std::to_string(eig.eigenvalues().minCoeff() / max_ev) + ")");
    }
    return d;
}

ModelSpec make_ssts_spec(const StateDiagram& diagram, bool with_entry, const std::vector<std::string>& linear_x,
                         SmoothSpec::Mode mode, int k) {
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    ModelTerm t_smooth;
    t_smooth.kind = ModelTerm::Kind::Smooth;
    t_smooth.smooth.variable = "t";
    t_smooth.smooth.by = "transition";
    t_smooth.smooth.mode = mode;
    t_smooth.smooth.k = k;
    spec.terms.push_back(t_smooth);
    if (with_entry) {
        int D = diagram.final_progression_state();
        for (int s = 1; s <= D - 1; ++s) {
            ModelTerm t;
            t.kind = ModelTerm::Kind::Smooth;
            t.smooth.variable = entry_time_column(s);
            t.smooth.by = trans_after_exact_column(s);
            t.smooth.mode = mode;
            t.smooth.k = k;
            spec.terms.push_back(t);
        }
    }
    for (const auto& x : linear_x) spec.terms.push_back({ModelTerm::Kind::Linear, x, "transition", {}});
    return spec;
}

ModelSpec make_mts_spec(const StateDiagram& diagram, bool with_entry, const std::vector<std::string>& linear_x,
                        SmoothSpec::Mode mode, int k) {
    ModelSpec spec;
    spec.terms.push_back({ModelTerm::Kind::TransitionIntercepts, "", "", {}});
    int D = diagram.final_progression_state();
    for (int s = 0; s <= D - 1; ++s) {
        ModelTerm t;
        t.kind = ModelTerm::Kind::Smooth;
        t.smooth.variable = timescale_column(s);
        t.smooth.by = trans_after_column(s);
        t.smooth.mode = mode;
        t.smooth.k = k;
        spec.terms.push_back(t);
    }
    if (with_entry) {
        for (int s = 1; s <= D - 1; ++s) {
            ModelTerm t;
            t.kind = ModelTerm::Kind::Smooth;
            t.smooth.variable = entry_time_column(s);
            t.smooth.by = trans_after_column(s);
            t.smooth.mode = mode;
            t.smooth.k = k;
            spec.terms.push_back(t);
        }
    }
    for (const auto& x : linear_x) spec.terms.push_back({ModelTerm::Kind::Linear, x, "transition", {}});
    return spec;
}

}  // namespace msmpam
