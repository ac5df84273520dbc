#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace msmpam {

// Penalized-spline smooth specification. `by` stratifies the smooth over a
// categorical column; with mode `ps` each level owns a basis and smoothing
// parameter and `none` rows carry no basis at all, with mode `fs` (factor
// smooth) all levels share a single smoothing parameter and a full-rank
// penalty.
struct SmoothSpec {
    std::string variable;
    int k = 20;
    int degree = 3;
    int penalty_order = 2;
    std::string by;  // empty = unstratified
    enum class Mode { Ps, Fs } mode = Mode::Ps;
    std::vector<double> explicit_knots;  // optional full knot vector

    void check() const;
};

// Clamped (open) B-spline basis: k functions of the given degree over a knot
// vector with degree+1 repeated boundary knots.
class BSplineBasis {
public:
    BSplineBasis() = default;
    BSplineBasis(std::vector<double> knots, int degree);

    // Interior knots at index-based quantiles of the unique sorted values,
    // clamped boundary knots at the data range.
    static BSplineBasis from_data(const std::vector<double>& x, int k, int degree);

    int n_basis() const { return k_; }
    int degree() const { return degree_; }
    const std::vector<double>& knots() const { return knots_; }
    double lower() const { return knots_[degree_]; }
    double upper() const { return knots_[k_]; }

    // Evaluates the degree+1 non-zero basis functions at x; returns the index
    // of the first non-zero column. When clamp is false, x outside the knot
    // range raises XOutsideKnots; when true, x is clamped to the boundary and
    // *clamped is flagged.
    int eval(double x, double* values, bool clamp = false, bool* clamped = nullptr) const;

    Eigen::MatrixXd design(const std::vector<double>& x, bool clamp = false) const;

private:
    std::vector<double> knots_;
    int degree_ = 3;
    int k_ = 0;
};

// D^T D for the order-th difference operator on k coefficients.
Eigen::MatrixXd difference_matrix(int k, int order);
Eigen::MatrixXd difference_penalty(int k, int order);

// Full-rank factor-smooth penalty: D^T D plus the projection onto its null
// space (so every direction is shrunk by the single shared lambda).
Eigen::MatrixXd factor_smooth_penalty(int k, int order);

// Orthonormal basis Z (k x k-1) of the null space of c^T; B*Z has columns
// orthogonal to the intercept when c holds the column sums of B.
Eigen::MatrixXd sum_to_zero_transform(const Eigen::VectorXd& c);

// One stratification level of a smooth term, in model-coefficient space.
struct BasisBlock {
    std::string label;
    int by_level = -1;            // level code in the by column; -1 = unstratified
    BSplineBasis basis;
    Eigen::MatrixXd Z;            // k x n_cols centering transform; empty => identity
    Eigen::MatrixXd penalty;      // n_cols x n_cols, PSD (ps) / PD (fs)
    int n_cols = 0;
    int lambda_group = -1;        // assigned at assembly
};

// Builds the blocks of a (possibly stratified) smooth from the active rows'
// covariate values. `by_codes`/`by_levels` empty for an unstratified smooth;
// `none_level` rows contribute to no block.
std::vector<BasisBlock> stratified_smooth(const std::vector<double>& x, const std::vector<int>& by_codes,
                                          const std::vector<std::string>& by_levels, int none_level,
                                          const SmoothSpec& spec);

}  // namespace msmpam
