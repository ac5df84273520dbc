#include "msmpam/predict.hpp"

#include <algorithm>
#include <cmath>

#include "msmpam/error.hpp"
#include "msmpam/ped.hpp"
#include "msmpam/rng.hpp"
#include "msmpam/stats.hpp"

namespace msmpam {

EvalGrid EvalGrid::one_d(double t_min, double t_max, double step) {
    if (!(step > 0.0) || !(t_max > t_min)) fail_usage("BadArgument", "grid needs step > 0, t_max > t_min");
    EvalGrid g;
    for (int i = 0;; ++i) {
        double t = t_min + i * step;
        if (t > t_max + 1e-9) break;
        g.t.push_back(std::min(t, t_max));
    }
    return g;
}

EvalGrid EvalGrid::triangular(double t_min, double t_max, double step, double entry_step) {
    EvalGrid g = one_d(t_min, t_max, step);
    if (!(entry_step > 0.0)) fail_usage("BadArgument", "triangular grid needs entry_step > 0");
    g.entry_step = entry_step;
    for (double t : g.t)
        for (int j = 1;; ++j) {
            double e = j * entry_step;
            if (e > t + 1e-9) break;
            g.points2d.emplace_back(t, e);
        }
    return g;
}

Frame prediction_frame(const StateDiagram& diagram, int k, const std::vector<double>& t, const Profile& profile) {
    const std::size_t n = t.size();
    const int from = diagram.from_state(k);
    const int D = diagram.final_progression_state();

    Frame f;
    {
        std::vector<std::string> labels;
        for (int j = 0; j < diagram.n_transitions(); ++j) labels.push_back(diagram.transition_label(j));
        f.add("transition", Column::categorical(std::vector<int>(n, k), std::move(labels)));
    }
    f.add("t", Column::numeric(std::vector<double>(t)));

    for (int d = 1; d <= D - 1; ++d) {
        std::vector<double> td(n, 0.0), ted(n, 0.0);
        if (from >= d) {
            auto it = profile.state_entry.find(d);
            if (it == profile.state_entry.end())
                fail_data("MissingColumn", "profile must supply the entry time into state " + std::to_string(d) +
                                               " for transition " + diagram.transition_label(k));
            for (std::size_t i = 0; i < n; ++i) {
                td[i] = std::max(0.0, t[i] - it->second);
                ted[i] = it->second;
            }
        }
        f.add(timescale_column(d), Column::numeric(std::move(td)));
        f.add(entry_time_column(d), Column::numeric(std::move(ted)));
    }

    for (int d = 0; d <= D - 1; ++d) {
        std::vector<std::string> levels{"none", "progression"};
        int risk_code = -1;
        for (int r : diagram.terminal_risks()) {
            if (diagram.to_state(k) == r) risk_code = static_cast<int>(levels.size());
            levels.push_back(std::to_string(d) + "->" + std::to_string(r));
        }
        int code = 0;
        if (from >= d) code = diagram.is_progression(k) ? 1 : risk_code;
        f.add(trans_after_column(d), Column::categorical(std::vector<int>(n, code), std::move(levels)));
    }

    for (int d = 1; d <= D - 1; ++d) {
        std::vector<std::string> levels{"none"};
        int code = 0;
        for (int j = 0; j < diagram.n_transitions(); ++j)
            if (diagram.from_state(j) >= d) {
                if (j == k && from >= d) code = static_cast<int>(levels.size());
                levels.push_back(diagram.transition_label(j));
            }
        f.add(trans_after_exact_column(d), Column::categorical(std::vector<int>(n, code), std::move(levels)));
    }

    for (const auto& [name, value] : profile.covariates)
        f.add(name, Column::numeric(std::vector<double>(n, value)));
    return f;
}

namespace {

// Binds the fitted blocks to a frame: per-block level translation resolved
// once, then rows stream through the raw basis representation.
struct BoundDesign {
    const FittedPam& fit;
    const Frame& frame;
    std::size_t clamped = 0;

    struct Bound {
        const DesignBlock* block;
        const std::vector<int>* codes = nullptr;      // by / transition codes in the frame
        const std::vector<double>* x = nullptr;       // covariate values
        std::vector<int> code_map;                    // frame code -> raw column offset (-1 inactive)
        int active_code = -1;                         // smooth: frame code matching the stratum
    };
    std::vector<Bound> bound;

    BoundDesign(const FittedPam& f, const Frame& fr) : fit(f), frame(fr) {
        for (const auto& b : fit.blocks) {
            Bound bb;
            bb.block = &b;
            switch (b.kind) {
                case DesignBlock::Kind::Intercepts: {
                    const Column& tc = frame.col("transition");
                    bb.codes = &tc.codes;
                    bb.code_map.assign(tc.levels.size(), -1);
                    for (std::size_t l = 0; l < tc.levels.size(); ++l) {
                        auto it = std::find(fit.transition_levels.begin(), fit.transition_levels.end(),
                                            tc.levels[l]);
                        if (it != fit.transition_levels.end())
                            bb.code_map[l] = static_cast<int>(it - fit.transition_levels.begin());
                    }
                    break;
                }
                case DesignBlock::Kind::Linear: {
                    bb.x = &frame.num(b.x_column);
                    if (!b.by_column.empty()) {
                        const Column& byc = frame.col(b.by_column);
                        bb.codes = &byc.codes;
                        bb.code_map.assign(byc.levels.size(), -1);
                        for (std::size_t l = 0; l < byc.levels.size(); ++l) {
                            if (static_cast<int>(l) == byc.none_level) continue;
                            auto it = std::find(b.by_levels.begin(), b.by_levels.end(), byc.levels[l]);
                            if (it != b.by_levels.end())
                                bb.code_map[l] = static_cast<int>(it - b.by_levels.begin());
                        }
                    }
                    break;
                }
                case DesignBlock::Kind::Smooth: {
                    bb.x = &frame.num(b.x_column);
                    if (!b.by_column.empty()) {
                        const Column& byc = frame.col(b.by_column);
                        bb.codes = &byc.codes;
                        for (std::size_t l = 0; l < byc.levels.size(); ++l)
                            if (byc.levels[l] == b.by_level_name) bb.active_code = static_cast<int>(l);
                    }
                    break;
                }
            }
            bound.push_back(std::move(bb));
        }
    }

    // Raw-space row entries (col, value).
    void build_raw_row(std::size_t i, std::vector<std::pair<int, double>>& out) {
        out.clear();
        double vals[8];
        for (auto& bb : bound) {
            const DesignBlock& b = *bb.block;
            switch (b.kind) {
                case DesignBlock::Kind::Intercepts: {
                    int m = bb.code_map[(*bb.codes)[i]];
                    if (m < 0) fail_data("SchemaMismatch", "unknown transition level in prediction frame");
                    out.emplace_back(b.raw_offset + m, 1.0);
                    break;
                }
                case DesignBlock::Kind::Linear: {
                    double xv = (*bb.x)[i];
                    if (xv == 0.0) break;
                    if (b.by_column.empty())
                        out.emplace_back(b.raw_offset, xv);
                    else {
                        int m = bb.code_map[(*bb.codes)[i]];
                        if (m >= 0) out.emplace_back(b.raw_offset + m, xv);
                    }
                    break;
                }
                case DesignBlock::Kind::Smooth: {
                    if (bb.codes && (*bb.codes)[i] != bb.active_code) break;
                    bool was_clamped = false;
                    int first = b.basis.eval((*bb.x)[i], vals, true, &was_clamped);
                    if (was_clamped) ++clamped;
                    for (int r = 0; r <= b.basis.degree(); ++r)
                        out.emplace_back(b.raw_offset + first + r, vals[r]);
                    break;
                }
            }
        }
    }
};

// Folds a raw row into coefficient space (dense over active block columns).
Eigen::VectorXd fold_row(const FittedPam& fit, const std::vector<std::pair<int, double>>& raw_row) {
    Eigen::VectorXd raw = Eigen::VectorXd::Zero(fit.p_raw);
    for (const auto& [c, v] : raw_row) raw[c] += v;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(fit.p);
    for (const auto& b : fit.blocks) {
        if (b.Z.size() > 0)
            x.segment(b.col_offset, b.n_cols) = b.Z.transpose() * raw.segment(b.raw_offset, b.raw_cols);
        else
            x.segment(b.col_offset, b.n_cols) = raw.segment(b.raw_offset, b.raw_cols);
    }
    return x;
}

Eigen::VectorXd expand_beta(const FittedPam& fit, const Eigen::VectorXd& beta) {
    Eigen::VectorXd raw = Eigen::VectorXd::Zero(fit.p_raw);
    for (const auto& b : fit.blocks) {
        if (b.Z.size() > 0)
            raw.segment(b.raw_offset, b.raw_cols) = b.Z * beta.segment(b.col_offset, b.n_cols);
        else
            raw.segment(b.raw_offset, b.raw_cols) = beta.segment(b.col_offset, b.n_cols);
    }
    return raw;
}

double dot_raw(const std::vector<std::pair<int, double>>& row, const Eigen::VectorXd& raw_beta) {
    double acc = 0.0;
    for (const auto& [c, v] : row) acc += v * raw_beta[c];
    return acc;
}

// Segment left endpoints/widths covering [s, max(grid)] on the fine step,
// split at every grid time; `record[j]` = grid index closed by segment j.
struct FineSegments {
    std::vector<double> left;
    std::vector<double> width;
    std::vector<int> record;  // grid point reached at the segment's right end, else -1
};

FineSegments fine_segments(double s, const std::vector<double>& grid_t, double dt) {
    FineSegments seg;
    for (std::size_t gi = 0; gi < grid_t.size(); ++gi)
        if (gi > 0 && grid_t[gi] <= grid_t[gi - 1]) fail_usage("BadArgument", "grid times must be increasing");
    double cur = s;
    std::size_t gi = 0;
    while (gi < grid_t.size() && grid_t[gi] <= s + 1e-12) {
        // grid point at (or before) the start: empty product / zero integral
        ++gi;
    }
    const double t_end = grid_t.empty() ? s : grid_t.back();
    while (cur < t_end - 1e-12) {
        double next = std::min(cur + dt, t_end);
        if (gi < grid_t.size()) next = std::min(next, grid_t[gi]);
        seg.left.push_back(cur);
        seg.width.push_back(next - cur);
        int rec = -1;
        if (gi < grid_t.size() && std::fabs(next - grid_t[gi]) < 1e-12) rec = static_cast<int>(gi++);
        seg.record.push_back(rec);
        cur = next;
    }
    return seg;
}

Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& V) {
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    // V may be numerically semi-definite; fall back to eigen decomposition.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
    Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal();
}

}  // namespace

LogHazardPrediction predict_loghazard(const FittedPam& fit, const Frame& newdata) {
    BoundDesign bd(fit, newdata);
    const std::size_t n = newdata.n_rows();
    LogHazardPrediction out;
    out.value.resize(n);
    out.se.resize(n);
    out.lo.resize(n);
    out.hi.resize(n);
    std::vector<std::pair<int, double>> row;
    for (std::size_t i = 0; i < n; ++i) {
        bd.build_raw_row(i, row);
        Eigen::VectorXd x = fold_row(fit, row);
        out.value[i] = x.dot(fit.beta);
        double s2 = x.dot(fit.V * x);
        out.se[i] = std::sqrt(std::max(0.0, s2));
        out.lo[i] = out.value[i] - 1.96 * out.se[i];
        out.hi[i] = out.value[i] + 1.96 * out.se[i];
    }
    out.clamped = bd.clamped;
    return out;
}

CumHazResult cumulative_hazard(const FittedPam& fit, const StateDiagram& diagram, int k, double s,
                               const std::vector<double>& grid_t, const Profile& profile,
                               const CumHazOptions& opts) {
    FineSegments seg = fine_segments(s, grid_t, opts.dt);
    Frame frame = prediction_frame(diagram, k, seg.left, profile);
    BoundDesign bd(fit, frame);

    std::vector<std::vector<std::pair<int, double>>> rows(seg.left.size());
    for (std::size_t i = 0; i < seg.left.size(); ++i) bd.build_raw_row(i, rows[i]);

    CumHazResult out;
    out.t = grid_t;
    out.est.assign(grid_t.size(), 0.0);
    out.lo.assign(grid_t.size(), 0.0);
    out.hi.assign(grid_t.size(), 0.0);

    auto accumulate = [&](const Eigen::VectorXd& raw_beta, std::vector<double>& at_grid) {
        at_grid.assign(grid_t.size(), 0.0);
        double H = 0.0;
        for (std::size_t j = 0; j < seg.left.size(); ++j) {
            H += std::exp(dot_raw(rows[j], raw_beta)) * seg.width[j];
            if (seg.record[j] >= 0) at_grid[seg.record[j]] = H;
        }
    };

    std::vector<double> point;
    accumulate(expand_beta(fit, fit.beta), point);
    out.est = point;

    if (opts.n_draws > 0) {
        Eigen::MatrixXd L = chol_lower(fit.V);
        Rng rng(opts.seed);
        std::vector<std::vector<double>> draws(opts.n_draws);
        Eigen::VectorXd xi(fit.p);
        for (int r = 0; r < opts.n_draws; ++r) {
            for (int j = 0; j < fit.p; ++j) xi[j] = rng.normal();
            Eigen::VectorXd beta_r = fit.beta + L * xi;
            accumulate(expand_beta(fit, beta_r), draws[r]);
        }
        std::vector<double> cell(opts.n_draws);
        for (std::size_t g = 0; g < grid_t.size(); ++g) {
            for (int r = 0; r < opts.n_draws; ++r) cell[r] = draws[r][g];
            out.lo[g] = quantile(cell, 0.025);
            out.hi[g] = quantile(cell, 0.975);
        }
    }
    return out;
}

namespace {

void product_integral_pass(const StateDiagram& diagram, const FineSegments& seg,
                           const std::vector<std::vector<std::vector<std::pair<int, double>>>>& rows_by_k,
                           const Eigen::VectorXd& raw_beta, std::vector<Eigen::MatrixXd>& out) {
    const int S = diagram.n_states();
    const int q = diagram.n_transitions();
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(S, S);
    Eigen::MatrixXd factor(S, S);
    for (std::size_t j = 0; j < seg.left.size(); ++j) {
        factor.setIdentity();
        for (int k = 0; k < q; ++k) {
            double inc = std::exp(dot_raw(rows_by_k[k][j], raw_beta)) * seg.width[j];
            if (inc > 1.0)
                fail_numeric("StepTooCoarse", "hazard increment " + std::to_string(inc) +
                                                  " > 1 at t=" + std::to_string(seg.left[j]));
            factor(diagram.from_state(k), diagram.to_state(k)) = inc;
        }
        // Row-stochastic clamp: no row of I + dP may leave [0,1].
        for (int r = 0; r < S; ++r) {
            double off = factor.row(r).sum() - factor(r, r);
            if (off > 1.0) {
                for (int c = 0; c < S; ++c)
                    if (c != r) factor(r, c) /= off;
                factor(r, r) = 0.0;
            } else {
                factor(r, r) = 1.0 - off;
            }
        }
        P = P * factor;
        if (seg.record[j] >= 0) out[seg.record[j]] = P;
    }
}

}  // namespace

TransProbResult transition_matrix(const FittedPam& fit, const StateDiagram& diagram, double s,
                                  const std::vector<double>& grid_t, const Profile& profile,
                                  const TransProbOptions& opts) {
    const int S = diagram.n_states();
    FineSegments seg = fine_segments(s, grid_t, opts.dt);

    // Raw rows per transition at every segment left endpoint.
    std::vector<std::vector<std::vector<std::pair<int, double>>>> rows_by_k(diagram.n_transitions());
    for (int k = 0; k < diagram.n_transitions(); ++k) {
        Frame frame = prediction_frame(diagram, k, seg.left, profile);
        BoundDesign bd(fit, frame);
        rows_by_k[k].resize(seg.left.size());
        for (std::size_t j = 0; j < seg.left.size(); ++j) bd.build_raw_row(j, rows_by_k[k][j]);
    }

    TransProbResult out;
    out.times = grid_t;
    out.P.assign(grid_t.size(), Eigen::MatrixXd::Identity(S, S));
    product_integral_pass(diagram, seg, rows_by_k, expand_beta(fit, fit.beta), out.P);

    if (opts.n_draws > 0) {
        Eigen::MatrixXd L = chol_lower(fit.V);
        Rng rng(opts.seed);
        std::vector<std::vector<Eigen::MatrixXd>> draws(opts.n_draws);
        Eigen::VectorXd xi(fit.p);
        for (int r = 0; r < opts.n_draws; ++r) {
            for (int j = 0; j < fit.p; ++j) xi[j] = rng.normal();
            Eigen::VectorXd beta_r = fit.beta + L * xi;
            draws[r].assign(grid_t.size(), Eigen::MatrixXd::Identity(S, S));
            product_integral_pass(diagram, seg, rows_by_k, expand_beta(fit, beta_r), draws[r]);
        }
        out.lo.assign(grid_t.size(), Eigen::MatrixXd::Zero(S, S));
        out.hi.assign(grid_t.size(), Eigen::MatrixXd::Zero(S, S));
        std::vector<double> cell(opts.n_draws);
        for (std::size_t g = 0; g < grid_t.size(); ++g)
            for (int a = 0; a < S; ++a)
                for (int b = 0; b < S; ++b) {
                    for (int r = 0; r < opts.n_draws; ++r) cell[r] = draws[r][g](a, b);
                    out.lo[g](a, b) = quantile(cell, 0.025);
                    out.hi[g](a, b) = quantile(cell, 0.975);
                }
    }
    return out;
}

TransProbResult transprob_ci(const FittedPam& fit, const StateDiagram& diagram, double s,
                             const std::vector<double>& grid_t, const Profile& profile, int n_draws,
                             std::uint64_t seed, double dt) {
    TransProbOptions opts;
    opts.dt = dt;
    opts.n_draws = n_draws;
    opts.seed = seed;
    return transition_matrix(fit, diagram, s, grid_t, profile, opts);
}

}  // namespace msmpam
