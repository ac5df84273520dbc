#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "msmpam/event_data.hpp"
#include "msmpam/ped.hpp"

namespace msmpam {

// Softmax regression over K classes with class 0 as reference; coefficients
// are (K-1) x p.
struct MultinomialFit {
    Eigen::MatrixXd coefficients;  // (K-1) x p
    int n_classes = 0;
    int iterations = 0;
    bool converged = false;
    double grad_max = 0.0;

    Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const;  // length K
};

// Newton with step halving; gradient max-norm < 1e-8 at the solution.
// Raises Separation when coefficients diverge and RankDeficiency for a
// singular design.
MultinomialFit fit_multinomial_logit(const Eigen::MatrixXd& X, const std::vector<int>& classes, int n_classes);

struct WeightTable {
    struct Entry {
        std::string subject_id;
        int from_state = 0;
        double weight = 1.0;
    };
    std::vector<Entry> entries;

    // per-state mean weights for diagnostics
    std::vector<std::pair<int, double>> state_means() const;

    void write_csv(const std::string& path) const;
    static WeightTable read_csv(const std::string& path);
};

struct WeightOptions {
    bool per_state = false;      // fit one propensity model per from-state
    double cap_quantile = 0.99;  // weights capped at this quantile
    double extreme_propensity = 1e-4;
};

// Propensity-score stabilized weights per (subject, from-state): the
// state-specific marginal frequency of the subject's exposure class divided
// by the covariate-conditional propensity of that class. Confounders enter
// the propensity model linearly; the pooled model adds from-state
// indicators.
WeightTable stabilized_weights(const Dataset& dataset, const std::string& exposure,
                               const std::vector<std::string>& confounders, const WeightOptions& opts = {});

// Joins a weight table onto PED rows by (subject, from-state of the row's
// transition).
Eigen::VectorXd weights_for_ped(const WeightTable& table, const PedDataset& ped);

}  // namespace msmpam
