#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "msmpam/model.hpp"

namespace msmpam {

struct FitControl {
    double dev_tol = 1e-8;    // relative penalized-deviance change
    double grad_tol = 1e-6;   // penalized-gradient max-norm
    int max_iter = 200;
    int max_halvings = 30;
    bool require_grad = true; // loosened during smoothing-parameter search
};

// The upper lambda bound keeps the penalized gradient representable:
// beyond ~1e7 the rounding noise in lambda * S * beta alone exceeds the
// 1e-6 gradient tolerance, while the smooth is already flat to well below
// estimation error.
struct LambdaControl {
    double log10_lo = -7.0;
    double log10_hi = 7.0;
    double golden_tol = 0.05;      // on log10 lambda
    double criterion_tol = 1e-4;   // outer-cycle stop
    int max_cycles = 6;
};

// Penalized IRLS solution at fixed smoothing parameters.
struct PirlsFit {
    Eigen::VectorXd beta;
    double deviance = 0.0;
    double penalized_deviance = 0.0;
    double grad_max = 0.0;
    int iterations = 0;
    Eigen::MatrixXd xtwx;  // X'WX at convergence (coefficient space)
    Eigen::MatrixXd info;  // X'WX + S_lambda
};

// Maximizes the penalized Poisson log-likelihood l(beta) - 1/2 sum_g
// lambda_g beta' S_g beta by iteratively reweighted least squares with step
// halving. `lambdas` holds one value per penalty group.
PirlsFit fit_pirls(const AssembledDesign& design, const Eigen::VectorXd& lambdas,
                   const FitControl& control = {}, const Eigen::VectorXd* beta_start = nullptr);

// Minimizes Deviance + 2*edf (Poisson scale fixed at 1) over log-lambdas by
// a cyclic per-group bracketed golden-section search; deterministic.
Eigen::VectorXd select_lambdas(const AssembledDesign& design, const LambdaControl& control = {},
                               const FitControl& fit_control = {});

struct FittedPam {
    std::vector<DesignBlock> blocks;
    std::vector<PenaltyGroup> groups;
    std::vector<std::string> transition_levels;
    int p = 0;
    int p_raw = 0;

    Eigen::VectorXd beta;
    Eigen::MatrixXd V;          // (X'WX + S_lambda)^-1 at convergence
    Eigen::VectorXd lambdas;    // per group
    Eigen::VectorXd edf_groups;
    double edf_total = 0.0;
    double deviance = 0.0;
    double aic = 0.0;           // deviance + 2*edf
    double grad_max = 0.0;
    int pirls_iterations = 0;

    void save(const std::string& dir) const;  // model.json + V.bin
    static FittedPam load(const std::string& dir);
};

// assemble + select_lambdas + final tight PIRLS; optional prior weights
// override the spec's weights column.
FittedPam fit(const PedDataset& ped, const ModelSpec& spec, const Eigen::VectorXd* weights = nullptr,
              const LambdaControl& lambda_control = {}, const FitControl& fit_control = {});

struct CoefRow {
    std::string term;
    std::string label;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 0.0;
};

// Wald table over intercept and linear columns; `term` filters by block
// label ("" = all), TermNotFound when nothing matches.
std::vector<CoefRow> coef_table(const FittedPam& fit, const std::string& term = "");

}  // namespace msmpam
