#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msmpam/event_data.hpp"

namespace msmpam {

// Tiny arithmetic-expression evaluator for free-form log-hazards
// (variables: t, t1, t_entry_1, covariate names; functions: exp, log,
// sqrt, pow, max, min; operators + - * / ^ and parentheses).
class Expr {
public:
    static Expr parse(const std::string& text);
    double eval(const std::function<double(const std::string&)>& lookup) const;

    struct Node;

private:
    std::shared_ptr<const Node> root_;
};

struct CovariateLaw {
    std::string name;
    enum class Kind { Bernoulli, Normal } kind = Kind::Bernoulli;
    double p = 0.5;  // Bernoulli success probability
};

// Closed-form log-hazard of one transition: either an additive form
//   beta0 + f_t(t) + f_t1(t - entry_1) + f_entry1(entry_1) + beta_x'x
// (the shape of every built-in DGP; null components are omitted), or a
// free-form expression.
struct DgpTransition {
    double beta0 = 0.0;
    std::function<double(double)> f_t;
    std::function<double(double)> f_t1;
    std::function<double(double)> f_entry1;
    std::vector<double> beta_x;  // aligned with DgpSpec::covariates
    std::shared_ptr<Expr> expr;  // overrides the additive form when set
};

struct DgpSpec {
    std::string name;
    StateDiagram diagram;
    std::vector<CovariateLaw> covariates;
    std::vector<DgpTransition> transitions;  // one per diagram transition
    bool has_censoring = false;              // random right-censoring
    double censor_shape = 1.5;
    double censor_scale = 10.0;
    double horizon = 10.0;
    int round_decimals = 2;
};

// Exact closed-form evaluation of the transition-k log-hazard given the
// global time, the subject's state-entry times (indexed by state, entry
// into state 0 at 0) and covariates.
double eval_dgp_loghazard(const DgpSpec& dgp, int k, double t, const std::vector<double>& state_entry,
                          const std::vector<double>& x);

// Built-in DGPs:
//   ssts_tableA1 / mts_tableA1           multi-state baselines (+ entry-time effects)
//   ssts_tableA1_x1 / mts_tableA1_x1     with the binary risk factor x1
//   ieb_{small,medium,large}_{bb,bn,nb,nn}  index-event-bias scenarios (x1, x2)
//   ic_pexp / ic_weibull / ic_icenreg    single-event DGPs for the IC study
//   ic_pexp_x1 / ic_weibull_x1           with the binary covariate (effect -1.3)
DgpSpec make_dgp(const std::string& name);

// Free-form DGP from JSON (see README for the schema).
DgpSpec dgp_from_json_string(const std::string& text);
DgpSpec dgp_from_json_file(const std::string& path);

}  // namespace msmpam
