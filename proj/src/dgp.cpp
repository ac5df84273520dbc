#include "msmpam/dgp.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "msmpam/error.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Expression evaluator

struct Expr::Node {
    enum class Op { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Call } op = Op::Const;
    double value = 0.0;
    std::string name;  // Var / Call
    std::vector<std::shared_ptr<const Node>> args;
};

namespace {

struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    void skip() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool eat(char c) {
        skip();
        if (pos < s.size() && s[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }
    [[noreturn]] void error(const std::string& msg) {
        fail_usage("BadExpression", msg + " at position " + std::to_string(pos) + " in '" + s + "'");
    }

    using NodePtr = std::shared_ptr<const Expr::Node>;

    NodePtr make(Expr::Node n) { return std::make_shared<const Expr::Node>(std::move(n)); }

    NodePtr parse_expr() {
        NodePtr left = parse_term();
        for (;;) {
            skip();
            if (eat('+')) {
                Expr::Node n;
                n.op = Expr::Node::Op::Add;
                n.args = {left, parse_term()};
                left = make(std::move(n));
            } else if (eat('-')) {
                Expr::Node n;
                n.op = Expr::Node::Op::Sub;
                n.args = {left, parse_term()};
                left = make(std::move(n));
            } else {
                return left;
            }
        }
    }

    NodePtr parse_term() {
        NodePtr left = parse_power();
        for (;;) {
            skip();
            if (eat('*')) {
                Expr::Node n;
                n.op = Expr::Node::Op::Mul;
                n.args = {left, parse_power()};
                left = make(std::move(n));
            } else if (eat('/')) {
                Expr::Node n;
                n.op = Expr::Node::Op::Div;
                n.args = {left, parse_power()};
                left = make(std::move(n));
            } else {
                return left;
            }
        }
    }

    NodePtr parse_power() {
        NodePtr base = parse_unary();
        skip();
        if (eat('^')) {
            Expr::Node n;
            n.op = Expr::Node::Op::Pow;
            n.args = {base, parse_power()};  // right associative
            return make(std::move(n));
        }
        return base;
    }

    NodePtr parse_unary() {
        skip();
        if (eat('-')) {
            Expr::Node n;
            n.op = Expr::Node::Op::Neg;
            n.args = {parse_unary()};
            return make(std::move(n));
        }
        (void)eat('+');
        return parse_atom();
    }

    NodePtr parse_atom() {
        skip();
        if (pos >= s.size()) error("unexpected end of expression");
        char c = s[pos];
        if (eat('(')) {
            NodePtr e = parse_expr();
            if (!eat(')')) error("missing ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t end = pos;
            while (end < s.size() &&
                   (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' || s[end] == 'e' ||
                    s[end] == 'E' || ((s[end] == '+' || s[end] == '-') && (s[end - 1] == 'e' || s[end - 1] == 'E'))))
                ++end;
            Expr::Node n;
            n.op = Expr::Node::Op::Const;
            n.value = std::stod(s.substr(pos, end - pos));
            pos = end;
            return make(std::move(n));
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos;
            while (end < s.size() && (std::isalnum(static_cast<unsigned char>(s[end])) || s[end] == '_')) ++end;
            std::string name = s.substr(pos, end - pos);
            pos = end;
            skip();
            if (eat('(')) {
                Expr::Node n;
                n.op = Expr::Node::Op::Call;
                n.name = name;
                if (!eat(')')) {
                    n.args.push_back(parse_expr());
                    while (eat(',')) n.args.push_back(parse_expr());
                    if (!eat(')')) error("missing ')' in call to " + name);
                }
                return make(std::move(n));
            }
            Expr::Node n;
            n.op = Expr::Node::Op::Var;
            n.name = name;
            return make(std::move(n));
        }
        error(std::string("unexpected character '") + c + "'");
    }
};

double eval_node(const Expr::Node& n, const std::function<double(const std::string&)>& lookup) {
    using Op = Expr::Node::Op;
    switch (n.op) {
        case Op::Const:
            return n.value;
        case Op::Var:
            return lookup(n.name);
        case Op::Add:
            return eval_node(*n.args[0], lookup) + eval_node(*n.args[1], lookup);
        case Op::Sub:
            return eval_node(*n.args[0], lookup) - eval_node(*n.args[1], lookup);
        case Op::Mul:
            return eval_node(*n.args[0], lookup) * eval_node(*n.args[1], lookup);
        case Op::Div:
            return eval_node(*n.args[0], lookup) / eval_node(*n.args[1], lookup);
        case Op::Pow:
            return std::pow(eval_node(*n.args[0], lookup), eval_node(*n.args[1], lookup));
        case Op::Neg:
            return -eval_node(*n.args[0], lookup);
        case Op::Call: {
            auto arg = [&](std::size_t i) { return eval_node(*n.args[i], lookup); };
            if (n.name == "exp" && n.args.size() == 1) return std::exp(arg(0));
            if (n.name == "log" && n.args.size() == 1) return std::log(arg(0));
            if (n.name == "sqrt" && n.args.size() == 1) return std::sqrt(arg(0));
            if (n.name == "pow" && n.args.size() == 2) return std::pow(arg(0), arg(1));
            if (n.name == "max" && n.args.size() == 2) return std::max(arg(0), arg(1));
            if (n.name == "min" && n.args.size() == 2) return std::min(arg(0), arg(1));
            fail_usage("BadExpression", "unknown function '" + n.name + "'");
        }
    }
    fail_usage("BadExpression", "corrupt expression node");
}

}  // namespace

Expr Expr::parse(const std::string& text) {
    Parser p{text};
    Expr e;
    e.root_ = p.parse_expr();
    p.skip();
    if (p.pos != text.size()) p.error("trailing input");
    return e;
}

double Expr::eval(const std::function<double(const std::string&)>& lookup) const {
    return eval_node(*root_, lookup);
}

// ---------------------------------------------------------------------------
// DGP evaluation

double eval_dgp_loghazard(const DgpSpec& dgp, int k, double t, const std::vector<double>& state_entry,
                          const std::vector<double>& x) {
    if (k < 0 || k >= dgp.diagram.n_transitions()) fail_usage("UnknownTransition", "transition index out of range");
    const DgpTransition& tr = dgp.transitions[k];
    const int from = dgp.diagram.from_state(k);
    double entry1 = (from >= 1 && state_entry.size() > 1) ? state_entry[1] : 0.0;

    if (tr.expr) {
        auto lookup = [&](const std::string& name) -> double {
            if (name == "t") return t;
            if (name == "t1") return from >= 1 ? t - entry1 : 0.0;
            if (name == "t_entry_1") return from >= 1 ? entry1 : 0.0;
            for (std::size_t c = 0; c < dgp.covariates.size(); ++c)
                if (dgp.covariates[c].name == name) return x[c];
            fail_usage("BadExpression", "unknown variable '" + name + "'");
        };
        return tr.expr->eval(lookup);
    }

    double lh = tr.beta0;
    if (tr.f_t) lh += tr.f_t(t);
    if (tr.f_t1) lh += tr.f_t1(t - entry1);
    if (tr.f_entry1) lh += tr.f_entry1(entry1);
    for (std::size_t c = 0; c < tr.beta_x.size(); ++c) lh += tr.beta_x[c] * x[c];
    return lh;
}

// ---------------------------------------------------------------------------
// Built-ins

namespace {

// Baseline log-hazard shapes of the multi-state DGPs.
double f01_ssts(double t) {
    double m = std::max(0.0, t - 3.0);
    return 0.10 * t * t / (0.7 + 0.04 * m * m * m);
}
double f03_ssts(double t) {
    double m = std::max(0.0, t - 1.0);
    return 0.15 * t * t / (0.9 + 0.01 * m * m * m);
}

DgpSpec multistate_base(bool mts, bool with_x1) {
    DgpSpec dgp;
    dgp.diagram = StateDiagram::progressive(2, 1);  // 0->1, 0->3, 1->2, 1->3
    dgp.has_censoring = true;
    dgp.censor_shape = 1.5;
    dgp.censor_scale = 10.0;
    if (with_x1) dgp.covariates.push_back({"x1", CovariateLaw::Kind::Bernoulli, 0.5});

    DgpTransition t01, t03, t12, t13;
    t01.beta0 = -3.9;
    t01.f_t = f01_ssts;
    t03.beta0 = -4.0;
    t03.f_t = f03_ssts;
    t12.beta0 = -3.4;
    t13.beta0 = -3.4;
    if (mts) {
        // First time scale shared with the corresponding state-0 transition,
        // second time scale since disease onset.
        t12.f_t = f01_ssts;
        t12.f_t1 = [](double t1) { return 0.32 * std::exp(-0.15 * t1); };
        t13.f_t = f03_ssts;
        t13.f_t1 = [](double t1) { return 0.14 * std::exp(-0.25 * t1); };
    } else {
        t12.f_t = [](double t) { return 0.48 * std::exp(-0.10 * t); };
        t13.f_t = [](double t) { return 0.16 * std::exp(-0.30 * t); };
    }
    // Entry-time effects on the post-onset transitions, shared by both DGPs.
    t12.f_entry1 = [](double e) { return 2.50 * std::exp(-0.60 * e); };
    t13.f_entry1 = [](double e) { return 0.14 * std::exp(-0.25 * e); };
    if (with_x1) {
        t01.beta_x = {0.2};
        t03.beta_x = {0.1};
        t12.beta_x = {0.2};
        t13.beta_x = {0.1};
    }
    dgp.transitions = {t01, t03, t12, t13};
    return dgp;
}

DgpSpec ieb_dgp(const std::string& size, const std::string& dists) {
    double effect = size == "small" ? 0.2 : size == "medium" ? 0.4 : 0.6;
    DgpSpec dgp = multistate_base(false, false);
    if (size == "large") dgp.transitions[2].beta0 = -4.4;  // 1->2 intercept in the large scenario

    auto law = [](char c, const std::string& name) {
        CovariateLaw l;
        l.name = name;
        l.kind = c == 'b' ? CovariateLaw::Kind::Bernoulli : CovariateLaw::Kind::Normal;
        return l;
    };
    if (dists.size() != 2 || (dists[0] != 'b' && dists[0] != 'n') || (dists[1] != 'b' && dists[1] != 'n'))
        fail_usage("UnknownDgp", "ieb distribution code must be two of {b,n}");
    dgp.covariates = {law(dists[0], "x1"), law(dists[1], "x2")};
    // Effects on onset and progression only.
    dgp.transitions[0].beta_x = {effect, effect};
    dgp.transitions[1].beta_x = {0.0, 0.0};
    dgp.transitions[2].beta_x = {effect, effect};
    dgp.transitions[3].beta_x = {0.0, 0.0};
    return dgp;
}

DgpSpec single_event_base() {
    DgpSpec dgp;
    dgp.diagram = StateDiagram::progressive(1, 0);  // 0->1 only
    dgp.has_censoring = false;                       // administrative only
    return dgp;
}

DgpSpec ic_pexp_dgp(bool with_x1) {
    DgpSpec dgp = single_event_base();
    DgpTransition tr;
    tr.beta0 = -3.5;
    tr.f_t = [](double t) { return 6.0 * gamma_pdf(t, 8.0, 0.5); };
    if (with_x1) {
        dgp.covariates.push_back({"x1", CovariateLaw::Kind::Bernoulli, 0.5});
        tr.beta_x = {-1.3};
    }
    dgp.transitions = {tr};
    return dgp;
}

DgpSpec ic_weibull_dgp(bool with_x1) {
    DgpSpec dgp = single_event_base();
    DgpTransition tr;
    // log h(t) = beta0 + log(shape) + (shape - 1) log t, shape 1.5.
    tr.beta0 = -3.5;
    tr.f_t = [](double t) { return std::log(1.5) + 0.5 * std::log(std::max(t, 1e-12)); };
    if (with_x1) {
        dgp.covariates.push_back({"x1", CovariateLaw::Kind::Bernoulli, 0.5});
        tr.beta_x = {-1.3};
    }
    dgp.transitions = {tr};
    return dgp;
}

DgpSpec ic_icenreg_dgp() {
    DgpSpec dgp = single_event_base();
    DgpTransition tr;
    // Weibull with shape 1.5 and scale 2: h(t) = (shape/scale)(t/scale)^(shape-1).
    tr.beta0 = std::log(1.5) - 1.5 * std::log(2.0);
    tr.f_t = [](double t) { return 0.5 * std::log(std::max(t, 1e-12)); };
    dgp.transitions = {tr};
    return dgp;
}

}  // namespace

DgpSpec make_dgp(const std::string& name) {
    DgpSpec dgp;
    if (name == "ssts_tableA1")
        dgp = multistate_base(false, false);
    else if (name == "ssts_tableA1_x1")
        dgp = multistate_base(false, true);
    else if (name == "mts_tableA1")
        dgp = multistate_base(true, false);
    else if (name == "mts_tableA1_x1")
        dgp = multistate_base(true, true);
    else if (name.rfind("ieb_", 0) == 0) {
        auto rest = name.substr(4);
        auto us = rest.find('_');
        if (us == std::string::npos) fail_usage("UnknownDgp", "expected ieb_<size>_<dists>");
        dgp = ieb_dgp(rest.substr(0, us), rest.substr(us + 1));
    } else if (name == "ic_pexp")
        dgp = ic_pexp_dgp(false);
    else if (name == "ic_pexp_x1")
        dgp = ic_pexp_dgp(true);
    else if (name == "ic_weibull")
        dgp = ic_weibull_dgp(false);
    else if (name == "ic_weibull_x1")
        dgp = ic_weibull_dgp(true);
    else if (name == "ic_icenreg")
        dgp = ic_icenreg_dgp();
    else
        fail_usage("UnknownDgp", "no built-in DGP named '" + name + "'");
    dgp.name = name;
    return dgp;
}

namespace {

DgpSpec dgp_from_json(const json& j) {
    DgpSpec dgp;
    if (j.contains("name") && j.size() == 1) return make_dgp(j.at("name").get<std::string>());
    dgp.name = j.value("name", std::string("custom"));
    const json& diag = j.at("diagram");
    dgp.diagram = StateDiagram::progressive(diag.at("D").get<int>(), diag.at("n_risks").get<int>());
    if (j.contains("covariates"))
        for (const auto& jc : j.at("covariates")) {
            CovariateLaw law;
            law.name = jc.at("name").get<std::string>();
            std::string kind = jc.at("law").get<std::string>();
            if (kind == "bernoulli") {
                law.kind = CovariateLaw::Kind::Bernoulli;
                law.p = jc.value("p", 0.5);
            } else if (kind == "normal") {
                law.kind = CovariateLaw::Kind::Normal;
            } else {
                fail_usage("UnknownDgp", "covariate law must be 'bernoulli' or 'normal'");
            }
            dgp.covariates.push_back(std::move(law));
        }
    const json& trs = j.at("transitions");
    if (static_cast<int>(trs.size()) != dgp.diagram.n_transitions())
        fail_usage("UnknownDgp", "need one transition log-hazard per diagram transition");
    for (const auto& jt : trs) {
        DgpTransition tr;
        tr.expr = std::make_shared<Expr>(Expr::parse(jt.at("loghazard").get<std::string>()));
        dgp.transitions.push_back(std::move(tr));
    }
    if (j.contains("censoring")) {
        dgp.has_censoring = true;
        dgp.censor_shape = j.at("censoring").at("weibull_shape").get<double>();
        dgp.censor_scale = j.at("censoring").at("weibull_scale").get<double>();
    }
    dgp.horizon = j.value("horizon", 10.0);
    dgp.round_decimals = j.value("round_decimals", 2);
    return dgp;
}

}  // namespace

DgpSpec dgp_from_json_string(const std::string& text) { return dgp_from_json(json::parse(text)); }

DgpSpec dgp_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_data("FileNotFound", "cannot open '" + path + "'");
    return dgp_from_json(json::parse(in));
}

}  // namespace msmpam
