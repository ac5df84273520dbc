#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "msmpam/error.hpp"
#include "msmpam/rng.hpp"
#include "msmpam/spline.hpp"

using namespace msmpam;

namespace {

// Independent de Boor recursion from the textbook definition, evaluating a
// single basis function B_{i,p}(x) over the full knot vector.
double deboor_single(const std::vector<double>& knots, int i, int p, double x, double x_max) {
    if (p == 0) {
        // [t_i, t_{i+1}) with the right boundary closed into the last span
        bool inside = x >= knots[i] && x < knots[i + 1];
        bool at_end = x == x_max && x == knots[i + 1] && knots[i] < knots[i + 1];
        return inside || at_end ? 1.0 : 0.0;
    }
    double left = 0.0, right = 0.0;
    if (knots[i + p] > knots[i]) left = (x - knots[i]) / (knots[i + p] - knots[i]) *
                                        deboor_single(knots, i, p - 1, x, x_max);
    if (knots[i + p + 1] > knots[i + 1])
        right = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) *
                deboor_single(knots, i + 1, p - 1, x, x_max);
    return left + right;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
    return v;
}

}  // namespace

TEST_CASE("b-spline rows are a partition of unity with local support") {
    auto x = linspace(0.0, 10.0, 201);
    BSplineBasis basis = BSplineBasis::from_data(x, 20, 3);
    CHECK(basis.n_basis() == 20);
    Eigen::MatrixXd B = basis.design(x);
    CHECK(B.cols() == 20);
    for (int i = 0; i < B.rows(); ++i) {
        CHECK(B.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        int nonzero = 0;
        for (int j = 0; j < B.cols(); ++j)
            if (B(i, j) != 0.0) ++nonzero;
        CHECK(nonzero <= 4);
    }
}

TEST_CASE("b-spline evaluation matches the recursive oracle") {
    auto x = linspace(0.0, 5.0, 41);
    BSplineBasis basis = BSplineBasis::from_data(x, 9, 3);
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        double xi = rep == 0 ? 0.0 : (rep == 1 ? 5.0 : rng.uniform(0.0, 5.0));
        double vals[8];
        int first = basis.eval(xi, vals);
        for (int j = 0; j < basis.n_basis(); ++j) {
            double expected = deboor_single(basis.knots(), j, 3, xi, basis.upper());
            double got = (j >= first && j <= first + 3) ? vals[j - first] : 0.0;
            CHECK(got == doctest::Approx(expected).epsilon(1e-10));
        }
    }
    // boundary: clamped basis starts at 1 for the first function as x -> lower
    double vals[8];
    int first = basis.eval(0.0, vals);
    CHECK(first == 0);
    // partition of unity holds at the boundary too
    CHECK(vals[0] + vals[1] + vals[2] + vals[3] == doctest::Approx(1.0));

    CHECK_THROWS_WITH_AS(basis.eval(-0.1, vals), doctest::Contains("XOutsideKnots"), Error);
    bool clamped = false;
    basis.eval(-0.1, vals, true, &clamped);
    CHECK(clamped);
}

TEST_CASE("difference penalty null space and explicit oracle") {
    Eigen::MatrixXd S = difference_penalty(8, 2);
    Eigen::VectorXd linear(8), constant(8);
    for (int m = 0; m < 8; ++m) {
        linear[m] = 2.0 * m + 1.0;
        constant[m] = 3.0;
    }
    CHECK(linear.dot(S * linear) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(constant.dot(S * constant) == doctest::Approx(0.0).epsilon(1e-12));

    // order 2, k=4, gamma=(0,0,1,0): D gamma = (1, -2) so the form is 5
    Eigen::MatrixXd D = difference_matrix(4, 2);
    Eigen::VectorXd g(4);
    g << 0, 0, 1, 0;
    Eigen::VectorXd Dg = D * g;
    CHECK(g.dot(difference_penalty(4, 2) * g) == doctest::Approx(Dg.squaredNorm()));
    CHECK(g.dot(difference_penalty(4, 2) * g) == doctest::Approx(5.0));

    // order 1 annihilates constants
    Eigen::MatrixXd S1 = difference_penalty(6, 1);
    Eigen::VectorXd c = Eigen::VectorXd::Constant(6, 2.5);
    CHECK(c.dot(S1 * c) == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(difference_penalty(4, 4), doctest::Contains("OrderTooLarge"), Error);
}

TEST_CASE("penalty form is zero iff coefficients are affine in index") {
    Rng rng(9);
    Eigen::MatrixXd S = difference_penalty(12, 2);
    for (int rep = 0; rep < 20; ++rep) {
        double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        Eigen::VectorXd affine(12), bent(12);
        for (int m = 0; m < 12; ++m) {
            affine[m] = a + b * m;
            bent[m] = a + b * m;
        }
        bent[rng.uniform_int(0, 11)] += rng.uniform(0.1, 1.0);
        CHECK(affine.dot(S * affine) == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(bent.dot(S * bent) > 1e-4);
    }
}

TEST_CASE("stratified smooth: ps reference-level coding and fs full rank") {
    Rng rng(17);
    std::vector<double> x;
    std::vector<int> by;
    std::vector<std::string> levels{"none", "progression", "1->3"};
    for (int i = 0; i < 400; ++i) {
        int level = rng.uniform_int(0, 2);
        by.push_back(level);
        x.push_back(level == 0 ? 0.0 : rng.uniform(0.0, 8.0));
    }
    SmoothSpec spec;
    spec.variable = "t1";
    spec.k = 8;

    SUBCASE("ps mode") {
        auto blocks = stratified_smooth(x, by, levels, 0, spec);
        REQUIRE(blocks.size() == 2);  // one per non-none level
        for (const auto& b : blocks) {
            CHECK(b.n_cols == 7);  // k - 1 after centering
            CHECK(b.Z.rows() == 8);
            // centered columns are orthogonal to the intercept over the level rows
            Eigen::VectorXd colsum = Eigen::VectorXd::Zero(b.n_cols);
            double vals[8];
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (by[i] != b.by_level) continue;
                int first = b.basis.eval(x[i], vals);
                Eigen::VectorXd raw = Eigen::VectorXd::Zero(8);
                for (int r = 0; r <= 3; ++r) raw[first + r] = vals[r];
                colsum += b.Z.transpose() * raw;
            }
            CHECK(colsum.lpNorm<Eigen::Infinity>() == doctest::Approx(0.0).epsilon(1e-9));
            // penalty symmetric PSD
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b.penalty);
            CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
        }
    }

    SUBCASE("fs mode has strictly positive definite penalties and shared lambda") {
        spec.mode = SmoothSpec::Mode::Fs;
        auto blocks = stratified_smooth(x, by, levels, 0, spec);
        REQUIRE(blocks.size() == 2);
        for (const auto& b : blocks) {
            CHECK(b.n_cols == 8);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b.penalty);
            CHECK(eig.eigenvalues().minCoeff() > 1e-8);
        }
    }
}

TEST_CASE("assembled stratified design has full column rank (QR oracle)") {
    // intercept-per-level + centered per-level smooths, checked by pivoted QR
    Rng rng(21);
    std::vector<double> x;
    std::vector<int> by;
    std::vector<std::string> levels{"none", "a", "b"};
    for (int i = 0; i < 300; ++i) {
        int level = rng.uniform_int(0, 2);
        by.push_back(level);
        x.push_back(level == 0 ? 0.0 : rng.uniform(0.0, 4.0));
    }
    SmoothSpec spec;
    spec.variable = "v";
    spec.k = 7;
    auto blocks = stratified_smooth(x, by, levels, 0, spec);

    int p = 3;  // level intercepts (incl. none)
    for (const auto& b : blocks) p += b.n_cols;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), p);
    for (std::size_t i = 0; i < x.size(); ++i) X(static_cast<Eigen::Index>(i), by[i]) = 1.0;
    int off = 3;
    for (const auto& b : blocks) {
        double vals[8];
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (by[i] != b.by_level) continue;
            int first = b.basis.eval(x[i], vals);
            Eigen::VectorXd raw = Eigen::VectorXd::Zero(7);
            for (int r = 0; r <= 3; ++r) raw[first + r] = vals[r];
            X.row(static_cast<Eigen::Index>(i)).segment(off, b.n_cols) += (b.Z.transpose() * raw).transpose();
        }
        off += b.n_cols;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    CHECK(qr.rank() == p);
}
