#include "msmpam/spline.hpp"

#include <algorithm>
#include <cmath>

#include "msmpam/error.hpp"

namespace msmpam {

void SmoothSpec::check() const {
    if (k < degree + 2) fail_usage("BadSmoothSpec", "need k >= degree + 2");
    if (penalty_order >= k) fail_usage("OrderTooLarge", "penalty order must be < k");
    if (penalty_order < 1) fail_usage("BadSmoothSpec", "penalty order must be >= 1");
}

BSplineBasis::BSplineBasis(std::vector<double> knots, int degree) : knots_(std::move(knots)), degree_(degree) {
    k_ = static_cast<int>(knots_.size()) - degree_ - 1;
    if (k_ < degree_ + 1) fail_usage("BadSmoothSpec", "knot vector too short");
    for (std::size_t i = 1; i < knots_.size(); ++i)
        if (knots_[i] < knots_[i - 1]) fail_usage("BadSmoothSpec", "knots must be non-decreasing");
}

BSplineBasis BSplineBasis::from_data(const std::vector<double>& x, int k, int degree) {
    if (x.empty()) fail_usage("BadSmoothSpec", "no data for knot placement");
    std::vector<double> u(x);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    int n_interior = k - degree - 1;
    if (static_cast<int>(u.size()) < n_interior + 2)
        fail_usage("BadSmoothSpec", "only " + std::to_string(u.size()) + " distinct values for k=" +
                                        std::to_string(k) + " basis functions");
    double lo = u.front(), hi = u.back();
    if (!(hi > lo)) fail_usage("BadSmoothSpec", "constant covariate cannot carry a smooth");

    std::vector<double> knots;
    for (int i = 0; i <= degree; ++i) knots.push_back(lo);
    std::size_t m = u.size();
    for (int i = 1; i <= n_interior; ++i) {
        // Index-based quantiles over the unique values: strictly increasing.
        double pos = static_cast<double>(i) * static_cast<double>(m - 1) / (n_interior + 1);
        std::size_t idx = static_cast<std::size_t>(std::lround(pos));
        idx = std::min(std::max<std::size_t>(idx, 1), m - 2);
        knots.push_back(u[idx]);
    }
    for (int i = 0; i <= degree; ++i) knots.push_back(hi);
    // Interior indices can still collide when m is small; nudge to midpoints.
    for (std::size_t i = degree + 1; i + degree + 1 < knots.size(); ++i)
        if (knots[i] <= knots[i - 1]) knots[i] = 0.5 * (knots[i - 1] + knots[i + 1]);
    return BSplineBasis(std::move(knots), degree);
}

int BSplineBasis::eval(double x, double* values, bool clamp, bool* clamped) const {
    const double lo = lower(), hi = upper();
    if (x < lo || x > hi) {
        if (!clamp)
            fail_data("XOutsideKnots", "x=" + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                           std::to_string(hi) + "]");
        x = std::min(std::max(x, lo), hi);
        if (clamped) *clamped = true;
    }
    // Knot span: largest i in [degree, k-1] with t_i <= x < t_{i+1};
    // x == upper() falls into the last span.
    int span;
    if (x >= knots_[k_]) {
        span = k_ - 1;
    } else {
        span = static_cast<int>(std::upper_bound(knots_.begin() + degree_, knots_.begin() + k_, x) -
                                knots_.begin()) - 1;
    }
    // Cox-de Boor triangular scheme for the non-zero entries.
    double left[8], right[8];
    values[0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
        left[j] = x - knots_[span + 1 - j];
        right[j] = knots_[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    return span - degree_;
}

Eigen::MatrixXd BSplineBasis::design(const std::vector<double>& x, bool clamp) const {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), k_);
    double vals[8];
    for (std::size_t i = 0; i < x.size(); ++i) {
        int first = eval(x[i], vals, clamp);
        for (int r = 0; r <= degree_; ++r) B(static_cast<Eigen::Index>(i), first + r) = vals[r];
    }
    return B;
}

Eigen::MatrixXd difference_matrix(int k, int order) {
    if (order >= k) fail_usage("OrderTooLarge", "difference order must be < k");
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(k, k);
    for (int o = 0; o < order; ++o) {
        int rows = D.rows() - 1;
        Eigen::MatrixXd Dn(rows, k);
        for (int i = 0; i < rows; ++i) Dn.row(i) = D.row(i + 1) - D.row(i);
        D = std::move(Dn);
    }
    return D;
}

Eigen::MatrixXd difference_penalty(int k, int order) {
    Eigen::MatrixXd D = difference_matrix(k, order);
    return D.transpose() * D;
}

Eigen::MatrixXd factor_smooth_penalty(int k, int order) {
    Eigen::MatrixXd S = difference_penalty(k, order);
    // Null space of the order-th difference penalty: polynomials of degree
    // < order in the coefficient index.
    Eigen::MatrixXd N(k, order);
    for (int p = 0; p < order; ++p)
        for (int m = 0; m < k; ++m) N(m, p) = std::pow(static_cast<double>(m) / (k - 1), p);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(N);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(k, order);
    return S + Q * Q.transpose();
}

Eigen::MatrixXd sum_to_zero_transform(const Eigen::VectorXd& c) {
    int k = static_cast<int>(c.size());
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
    Eigen::MatrixXd Q = qr.householderQ();
    return Q.rightCols(k - 1);
}

std::vector<BasisBlock> stratified_smooth(const std::vector<double>& x, const std::vector<int>& by_codes,
                                          const std::vector<std::string>& by_levels, int none_level,
                                          const SmoothSpec& spec) {
    spec.check();
    const bool stratified = !by_codes.empty();

    // Shared basis over all active rows (by != none).
    std::vector<double> active;
    if (stratified) {
        active.reserve(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            if (by_codes[i] != none_level) active.push_back(x[i]);
    } else {
        active = x;
    }
    BSplineBasis basis = spec.explicit_knots.empty() ? BSplineBasis::from_data(active, spec.k, spec.degree)
                                                     : BSplineBasis(spec.explicit_knots, spec.degree);
    const int k = basis.n_basis();

    std::vector<int> levels;
    if (stratified) {
        for (int l = 0; l < static_cast<int>(by_levels.size()); ++l)
            if (l != none_level) levels.push_back(l);
    } else {
        levels.push_back(-1);
    }

    std::vector<BasisBlock> blocks;
    for (int level : levels) {
        BasisBlock block;
        block.by_level = level;
        block.label = "s(" + spec.variable + ")" + (level >= 0 ? ":" + by_levels[level] : "");
        block.basis = basis;
        if (spec.mode == SmoothSpec::Mode::Fs) {
            block.n_cols = k;
            block.penalty = factor_smooth_penalty(k, spec.penalty_order);
        } else {
            // Sum-to-zero constraint over the level's rows keeps the block
            // orthogonal to the intercept columns.
            Eigen::VectorXd colsum = Eigen::VectorXd::Zero(k);
            double vals[8];
            bool any = false;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (stratified && by_codes[i] != level) continue;
                int first = basis.eval(x[i], vals);
                for (int r = 0; r <= spec.degree; ++r) colsum[first + r] += vals[r];
                any = true;
            }
            if (!any) fail_data("RankDeficiency", "level '" + block.label + "' has no rows");
            block.Z = sum_to_zero_transform(colsum);
            block.n_cols = k - 1;
            block.penalty = block.Z.transpose() * difference_penalty(k, spec.penalty_order) * block.Z;
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

}  // namespace msmpam
