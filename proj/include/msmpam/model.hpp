#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "msmpam/frame.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/spline.hpp"

namespace msmpam {

// Declarative hazard-model formula over PED columns.
struct ModelTerm {
    enum class Kind { TransitionIntercepts, Linear, Smooth };
    Kind kind = Kind::TransitionIntercepts;
    std::string column;  // Linear
    std::string by;      // Linear: optional stratification (usually "transition")
    SmoothSpec smooth;   // Smooth
};

struct ModelSpec {
    std::vector<ModelTerm> terms;
    std::string response = "d";
    std::string offset = "offset";
    std::string weights;  // optional PED column with prior weights

    static ModelSpec from_json_string(const std::string& text);
    static ModelSpec from_json_file(const std::string& path);
    std::string to_json_string() const;

    void check() const;  // exactly one TransitionIntercepts term
};

// One column group of the assembled design.
struct DesignBlock {
    enum class Kind { Intercepts, Linear, Smooth };
    Kind kind = Kind::Intercepts;
    std::string label;
    std::vector<std::string> col_labels;  // per final column (intercepts/linear)

    // Column ranges: raw = sparse pre-centering basis, final = coefficient space.
    int raw_offset = 0, raw_cols = 0;
    int col_offset = 0, n_cols = 0;

    // Row construction inputs.
    std::string x_column;   // linear / smooth covariate
    std::string by_column;  // stratification column; empty = none
    int by_level = -1;                     // training level code (smooth)
    std::string by_level_name;             // smooth: the stratum's level name
    std::vector<std::string> by_levels;    // linear: training level order

    // Smooth payload.
    BSplineBasis basis;
    Eigen::MatrixXd Z;        // raw_cols x n_cols; empty => identity
    Eigen::MatrixXd penalty;  // n_cols x n_cols; empty => unpenalized
    int lambda_group = -1;
};

struct PenaltyGroup {
    std::string label;
    std::vector<int> blocks;  // indices into DesignBlock list
};

// Assembled design in CSR form over the raw (sparse) columns, plus the
// blockwise centering transforms into coefficient space.
struct AssembledDesign {
    std::vector<DesignBlock> blocks;
    std::vector<PenaltyGroup> groups;
    int p_raw = 0;  // raw columns
    int p = 0;      // coefficients

    std::vector<int> row_ptr;
    std::vector<int> col_idx;
    std::vector<double> values;

    Eigen::VectorXd y;
    Eigen::VectorXd offset;
    Eigen::VectorXd prior_weights;

    std::size_t n_rows() const { return y.size(); }

    // eta = X beta (+ offset excluded); beta in coefficient space.
    Eigen::VectorXd linear_predictor(const Eigen::VectorXd& beta) const;
    Eigen::VectorXd expand_to_raw(const Eigen::VectorXd& beta) const;
    Eigen::VectorXd fold_from_raw(const Eigen::VectorXd& raw) const;
    // G_final = Zt' G_raw Zt, blockwise.
    Eigen::MatrixXd fold_gram(const Eigen::MatrixXd& gram_raw) const;
    // Sum of lambda_g * S_g over groups, in coefficient space.
    Eigen::MatrixXd penalty_matrix(const Eigen::VectorXd& lambdas) const;
};

// Builds the design from the PED per the spec's stratification rules.
// Raises MissingColumn for unknown columns, MissingNoneLevel when a helper
// variable lacks the declared reference level, and RankDeficiency when a
// ps-mode design has linearly dependent columns.
AssembledDesign assemble_design(const PedDataset& ped, const ModelSpec& spec,
                                const Eigen::VectorXd* weights = nullptr);

// Named built-in model specs used by the simulation studies.
// `ssts`: per-transition intercepts + f_k(t) stratified by transition;
// `mts`: intercepts + f(t) by trans_after_0 + f(t_d) by trans_after_d.
// Both include entry-time smooths when with_entry (stratified per
// trans_after_d_exact / trans_after_d), and x-by-transition linear terms.
ModelSpec make_ssts_spec(const StateDiagram& diagram, bool with_entry, const std::vector<std::string>& linear_x,
                         SmoothSpec::Mode mode = SmoothSpec::Mode::Ps, int k = 20);
ModelSpec make_mts_spec(const StateDiagram& diagram, bool with_entry, const std::vector<std::string>& linear_x,
                        SmoothSpec::Mode mode = SmoothSpec::Mode::Ps, int k = 20);

}  // namespace msmpam
