#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drnet/constraint_graph.hpp"
#include "drnet/encoder.hpp"
#include "drnet/optimizer.hpp"
#include "drnet/relaxations.hpp"
#include "drnet/rng.hpp"

// 3-SAT driver: Bernoulli literals with entropy collapse plus relaxed clause
// penalties, a DIMACS front end, a random generator at the hard ratio, and a
// complete DPLL procedure used as the independent oracle.

namespace drnet::sat {

// Normalized CNF: literals are signed 1-based variable indices; clauses hold
// no duplicate literals and no x/-x pairs; no clause is empty.
struct CnfFormula {
    int num_vars = 0;
    std::vector<std::vector<int>> clauses;

    int num_clauses() const { return static_cast<int>(clauses.size()); }
};

struct Assignment {
    std::vector<bool> values;  // index 0 unused
};

inline bool verify(const CnfFormula& f, const Assignment& a) {
    if (static_cast<int>(a.values.size()) != f.num_vars + 1) return false;
    for (const auto& clause : f.clauses) {
        bool satisfied = false;
        for (int lit : clause) {
            const int v = std::abs(lit);
            if (a.values[static_cast<std::size_t>(v)] == (lit > 0)) {
                satisfied = true;
                break;
            }
        }
        if (!satisfied) return false;
    }
    return true;
}

inline int unsatisfied_clauses(const CnfFormula& f, const Assignment& a) {
    int count = 0;
    for (const auto& clause : f.clauses) {
        bool satisfied = false;
        for (int lit : clause)
            if (a.values[static_cast<std::size_t>(std::abs(lit))] == (lit > 0)) {
                satisfied = true;
                break;
            }
        count += !satisfied;
    }
    return count;
}

// Standard DIMACS CNF: comments, "p cnf <vars> <clauses>", 0-terminated
// clauses. Tautologies are dropped with a warning; duplicate literals within
// a clause are removed.
inline CnfFormula parse_dimacs(const std::string& text,
                               std::vector<std::string>* warnings = nullptr) {
    const auto warn_out = [&](const std::string& msg) {
        if (warnings)
            warnings->push_back(msg);
        else
            warn(msg);
    };
    std::istringstream in(text);
    std::string token;
    CnfFormula f;
    long declared_clauses = -1;
    bool have_header = false;
    std::vector<int> current;
    while (in >> token) {
        if (token == "c" || token[0] == 'c') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (token == "%") break;  // some benchmark suites end with "% 0"
        if (token == "p") {
            std::string fmt;
            long nv = -1, nc = -1;
            if (!(in >> fmt >> nv >> nc) || fmt != "cnf" || nv < 0 || nc < 0)
                throw std::invalid_argument("dimacs: malformed header");
            f.num_vars = static_cast<int>(nv);
            declared_clauses = nc;
            have_header = true;
            continue;
        }
        long lit = 0;
        try {
            lit = std::stol(token);
        } catch (const std::exception&) {
            throw std::invalid_argument("dimacs: unexpected token '" + token + "'");
        }
        if (!have_header) throw std::invalid_argument("dimacs: clause before header");
        if (lit == 0) {
            if (current.empty()) throw std::invalid_argument("dimacs: empty clause");
            std::sort(current.begin(), current.end());
            current.erase(std::unique(current.begin(), current.end()), current.end());
            bool tautology = false;
            for (std::size_t i = 0; i + 1 < current.size() && !tautology; ++i)
                if (current[i] == -current[i + 1]) tautology = true;
            if (tautology)
                warn_out("dimacs: dropping tautological clause");
            else
                f.clauses.push_back(current);
            current.clear();
            continue;
        }
        if (std::abs(lit) > f.num_vars)
            throw std::invalid_argument("dimacs: literal " + std::to_string(lit) +
                                        " out of range for " + std::to_string(f.num_vars) +
                                        " variables");
        current.push_back(static_cast<int>(lit));
    }
    if (!have_header) throw std::invalid_argument("dimacs: missing header");
    if (!current.empty()) throw std::invalid_argument("dimacs: unterminated clause");
    if (declared_clauses >= 0 && declared_clauses != static_cast<long>(f.clauses.size()))
        warn_out("dimacs: header declares " + std::to_string(declared_clauses) + " clauses, got " +
                 std::to_string(f.clauses.size()));
    return f;
}

inline std::string to_dimacs(const CnfFormula& f, const std::string& comment = "") {
    std::ostringstream out;
    if (!comment.empty()) out << "c " << comment << "\n";
    out << "p cnf " << f.num_vars << ' ' << f.clauses.size() << "\n";
    for (const auto& clause : f.clauses) {
        for (int lit : clause) out << lit << ' ';
        out << "0\n";
    }
    return out.str();
}

// Complete DPLL: unit propagation with clause counters plus
// most-occurrences-in-minimum-size-clauses branching. Used only as an
// independent oracle for generation filtering and verification.
class DpllSolver {
public:
    explicit DpllSolver(const CnfFormula& f) : formula_(f) {
        const std::size_t n = static_cast<std::size_t>(f.num_vars) + 1;
        occ_pos_.assign(n, {});
        occ_neg_.assign(n, {});
        for (std::size_t c = 0; c < f.clauses.size(); ++c)
            for (int lit : f.clauses[c])
                (lit > 0 ? occ_pos_ : occ_neg_)[static_cast<std::size_t>(std::abs(lit))]
                    .push_back(static_cast<int>(c));
        assign_.assign(n, -1);
        true_count_.assign(f.clauses.size(), 0);
        free_count_.assign(f.clauses.size(), 0);
        for (std::size_t c = 0; c < f.clauses.size(); ++c)
            free_count_[c] = static_cast<int>(f.clauses[c].size());
    }

    std::optional<Assignment> solve() {
        if (!search()) return std::nullopt;
        Assignment a;
        a.values.assign(static_cast<std::size_t>(formula_.num_vars) + 1, false);
        for (int v = 1; v <= formula_.num_vars; ++v)
            a.values[static_cast<std::size_t>(v)] = assign_[static_cast<std::size_t>(v)] == 1;
        return a;
    }

private:
    // Counter updates always run to completion so unset_var can mirror them
    // exactly; the return value reports whether a clause went conflicting.
    bool set_var(int var, int value, std::vector<int>& trail) {
        assign_[static_cast<std::size_t>(var)] = value;
        trail.push_back(var);
        const auto& sat_side = value == 1 ? occ_pos_[static_cast<std::size_t>(var)]
                                          : occ_neg_[static_cast<std::size_t>(var)];
        const auto& unsat_side = value == 1 ? occ_neg_[static_cast<std::size_t>(var)]
                                            : occ_pos_[static_cast<std::size_t>(var)];
        for (int c : sat_side) ++true_count_[static_cast<std::size_t>(c)];
        bool ok = true;
        for (int c : unsat_side) {
            --free_count_[static_cast<std::size_t>(c)];
            if (true_count_[static_cast<std::size_t>(c)] == 0 &&
                free_count_[static_cast<std::size_t>(c)] == 0)
                ok = false;
        }
        return ok;
    }

    void unset_var(int var) {
        const int value = assign_[static_cast<std::size_t>(var)];
        for (int c : (value == 1 ? occ_pos_ : occ_neg_)[static_cast<std::size_t>(var)])
            --true_count_[static_cast<std::size_t>(c)];
        for (int c : (value == 1 ? occ_neg_ : occ_pos_)[static_cast<std::size_t>(var)])
            ++free_count_[static_cast<std::size_t>(c)];
        assign_[static_cast<std::size_t>(var)] = -1;
    }

    void rollback(std::vector<int>& trail, std::size_t mark) {
        while (trail.size() > mark) {
            unset_var(trail.back());
            trail.pop_back();
        }
    }

    // Propagate all unit clauses; false on conflict.
    bool propagate(std::vector<int>& trail) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t c = 0; c < formula_.clauses.size(); ++c) {
                if (true_count_[c] > 0 || free_count_[c] != 1) continue;
                int unit = 0;
                for (int lit : formula_.clauses[c])
                    if (assign_[static_cast<std::size_t>(std::abs(lit))] == -1) {
                        unit = lit;
                        break;
                    }
                if (unit == 0) continue;
                if (!set_var(std::abs(unit), unit > 0 ? 1 : 0, trail)) return false;
                changed = true;
            }
        }
        return true;
    }

    // Most occurrences among the smallest unsatisfied clauses; 0 if all
    // clauses are satisfied.
    int pick_branch_var(int& preferred_value) const {
        int min_size = std::numeric_limits<int>::max();
        for (std::size_t c = 0; c < formula_.clauses.size(); ++c)
            if (true_count_[c] == 0) min_size = std::min(min_size, free_count_[c]);
        if (min_size == std::numeric_limits<int>::max()) return 0;
        std::vector<int> pos(static_cast<std::size_t>(formula_.num_vars) + 1, 0);
        std::vector<int> neg(static_cast<std::size_t>(formula_.num_vars) + 1, 0);
        for (std::size_t c = 0; c < formula_.clauses.size(); ++c) {
            if (true_count_[c] != 0 || free_count_[c] != min_size) continue;
            for (int lit : formula_.clauses[c]) {
                const int v = std::abs(lit);
                if (assign_[static_cast<std::size_t>(v)] != -1) continue;
                ++(lit > 0 ? pos : neg)[static_cast<std::size_t>(v)];
            }
        }
        int best = 0;
        long best_score = -1;
        for (int v = 1; v <= formula_.num_vars; ++v) {
            const long p = pos[static_cast<std::size_t>(v)];
            const long n = neg[static_cast<std::size_t>(v)];
            if (p + n == 0) continue;
            const long score = p * n * 1024 + p + n;
            if (score > best_score) {
                best_score = score;
                best = v;
                preferred_value = p >= n ? 1 : 0;
            }
        }
        return best;
    }

    bool search() {
        std::vector<int> trail;
        return search_recurse(trail);
    }

    bool search_recurse(std::vector<int>& trail) {
        const std::size_t mark = trail.size();
        if (!propagate(trail)) {
            rollback(trail, mark);
            return false;
        }
        int preferred = 1;
        const int var = pick_branch_var(preferred);
        if (var == 0) return true;  // every clause satisfied
        for (int attempt = 0; attempt < 2; ++attempt) {
            const int value = attempt == 0 ? preferred : 1 - preferred;
            const std::size_t branch_mark = trail.size();
            if (set_var(var, value, trail)) {
                if (search_recurse(trail)) return true;
            }
            rollback(trail, branch_mark);
        }
        rollback(trail, mark);
        return false;
    }

    const CnfFormula& formula_;
    std::vector<std::vector<int>> occ_pos_, occ_neg_;
    std::vector<int> assign_;
    std::vector<int> true_count_;
    std::vector<int> free_count_;
};

inline std::optional<Assignment> dpll_solve(const CnfFormula& f) {
    return DpllSolver(f).solve();
}

// Random 3-SAT at the given clause/variable ratio. Whole formulas are
// rejection-sampled until satisfiable, so the instance distribution is the
// conditioned-on-SAT random one rather than a planted one.
inline CnfFormula generate_random_3sat(int n, double ratio, Rng& rng) {
    if (n < 3) throw std::invalid_argument("generate_random_3sat: need n >= 3");
    const int m = static_cast<int>(std::llround(ratio * n));
    for (;;) {
        CnfFormula f;
        f.num_vars = n;
        f.clauses.reserve(static_cast<std::size_t>(m));
        for (int c = 0; c < m; ++c) {
            int vars[3];
            for (int i = 0; i < 3; ++i) {
                int v;
                bool fresh;
                do {
                    v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                    fresh = true;
                    for (int j = 0; j < i; ++j) fresh = fresh && vars[j] != v;
                } while (!fresh);
                vars[i] = v;
            }
            std::vector<int> clause(3);
            for (int i = 0; i < 3; ++i)
                clause[static_cast<std::size_t>(i)] =
                    rng.next_u64() & 1 ? vars[i] : -vars[i];
            std::sort(clause.begin(), clause.end());
            f.clauses.push_back(std::move(clause));
        }
        if (dpll_solve(f)) return f;
    }
}

struct DriverOptions {
    EncoderMode encoder_mode = EncoderMode::free_logits;
    int mlp_hidden = 64;
    double init_stddev = 0.5;
    double clause_alpha = 0.01;

    // Literal entropy weight lambda_h, in per-variable effective units: the
    // objective divides local terms by the batch size, so the stored state
    // weight is scaled by N to keep these knobs instance-size independent.
    // Scheduled mode anneals one shared weight upward to the cap; adaptive
    // mode gives every variable its own weight that grows while the literal
    // stays fractional and relaxes once it collapses.
    bool entropy_adaptive = false;
    double entropy_lambda_init = 0.2;
    double entropy_schedule_factor = 1.05;
    long entropy_schedule_interval = 20;
    double entropy_lambda_cap = 1.0;
    // Collapse tolerance for the adaptive rule; must be reachable under
    // logit_clip (H at a clipped logit is ~0.02 for clip 6).
    double entropy_tau = 0.05;

    // Clause weights never drop below their initial value; hard-violated
    // clauses grow until they dominate. Whenever the largest weight passes
    // renorm_cap, the whole group is rescaled to keep ratios while leaving
    // the entropy terms a fighting chance.
    double clause_lambda_init = 1.0;
    double clause_lambda_min = 1.0;
    double clause_lambda_max = 1e3;
    double clause_renorm_cap = 20.0;
    double clause_decay_ratio = 1.0;
    // A literal counts as satisfying only when it clears 1/2 by this margin;
    // clauses whose literals merely graze 1/2 keep their weight growing.
    double satisfaction_margin = 0.0;
    // Logits are clamped here after every update: saturated sigmoids would
    // otherwise stop responding to even maximal clause weights.
    double logit_clip = 6.0;
    double tau = 0.01;
    double ema_decay = 0.9;
};

// Tuned solve schedule: momentum SGD annealed from a hot start, with warm
// cycles that re-randomize nothing but give weights and momentum a fresh
// start. One attempt spans several cycles.
inline SolveConfig default_solve_config(int num_vars) {
    SolveConfig cfg;
    cfg.update_rule = UpdateRule::sgd_momentum;
    cfg.learning_rate = 0.3;
    cfg.lr_decay = 0.5;
    cfg.lr_decay_interval = 600;
    cfg.warm_cycle = 2500;
    cfg.max_iterations = 12 * cfg.warm_cycle;
    cfg.decode_interval = 1;
    (void)num_vars;
    return cfg;
}

class Driver final : public InstanceDriver {
public:
    explicit Driver(CnfFormula formula, DriverOptions options = {})
        : formula_(std::move(formula)), options_(options) {
        std::vector<GlobalConstraint> constraints;
        for (std::size_t c = 0; c < formula_.clauses.size(); ++c) {
            std::vector<int> members;
            for (int lit : formula_.clauses[c]) members.push_back(std::abs(lit) - 1);
            std::sort(members.begin(), members.end());
            members.erase(std::unique(members.begin(), members.end()), members.end());
            if (members.size() < 2) {
                unit_clauses_.push_back(static_cast<int>(c));  // local term instead
                continue;
            }
            GlobalConstraint gc;
            gc.members = std::move(members);
            gc.kind = TermKind::sat_clause;
            gc.param = options_.clause_alpha;
            gc.penalty_state_id = 1 + static_cast<int>(c);
            gc.id = static_cast<int>(c);
            clause_of_constraint_.push_back(static_cast<int>(c));
            constraints.push_back(std::move(gc));
        }
        graph_ = ConstraintGraph::build(formula_.num_vars, std::move(constraints));

        LatentLayout layout{{{"literal", 1}}};
        if (options_.encoder_mode == EncoderMode::free_logits) {
            encoder_ = Encoder::free_logits(layout, formula_.num_vars, options_.init_stddev);
        } else {
            encoder_ = Encoder::mlp(layout, 2, options_.mlp_hidden);
            features_.reserve(static_cast<std::size_t>(formula_.num_vars));
            for (int v = 1; v <= formula_.num_vars; ++v) features_.push_back(var_features(v));
        }
        encoder_.register_params(params_);
    }

    const CnfFormula& formula() const { return formula_; }
    const ConstraintGraph& graph() const override { return graph_; }
    ParamStore& params() override { return params_; }
    void init_params(Rng& rng) override { encoder_.init(params_, rng); }

    void project_params() override {
        if (options_.logit_clip <= 0 || options_.encoder_mode != EncoderMode::free_logits) return;
        for (int id : encoder_.param_ids())
            for (double& x : params_.value(id).data)
                x = std::clamp(x, -options_.logit_clip, options_.logit_clip);
    }

    void post_adjust(std::vector<PenaltyState>& states) override {
        if (options_.clause_renorm_cap <= 0) return;
        const std::size_t first = static_cast<std::size_t>(formula_.num_vars);
        double max_lambda = 0.0;
        for (std::size_t c = first; c < states.size(); ++c)
            max_lambda = std::max(max_lambda, states[c].lambda);
        if (max_lambda <= options_.clause_renorm_cap) return;
        const double scale = options_.clause_renorm_cap / max_lambda;
        for (std::size_t c = first; c < states.size(); ++c)
            states[c].lambda = std::max(states[c].lambda_min, states[c].lambda * scale);
    }

    // States 0..N_l-1 hold the literal entropy weights; N_l + c is clause c.
    std::vector<PenaltyState> initial_penalty_states() const override {
        const double scale = static_cast<double>(formula_.num_vars);
        std::vector<PenaltyState> states;
        states.reserve(static_cast<std::size_t>(formula_.num_vars) + formula_.clauses.size());
        for (int v = 0; v < formula_.num_vars; ++v) {
            PenaltyState h;
            h.lambda = options_.entropy_lambda_init * scale;
            h.rule = options_.entropy_adaptive ? PenaltyState::Rule::adaptive
                                               : PenaltyState::Rule::scheduled;
            h.schedule_factor = options_.entropy_schedule_factor;
            h.schedule_interval = options_.entropy_schedule_interval;
            h.lambda_min = 0.05 * scale;
            h.lambda_max = options_.entropy_lambda_cap * scale;
            h.tau = options_.entropy_tau;
            h.ema_decay = options_.ema_decay;
            states.push_back(h);
        }
        for (std::size_t c = 0; c < formula_.clauses.size(); ++c) {
            PenaltyState s;
            s.lambda = options_.clause_lambda_init;
            s.lambda_min = options_.clause_lambda_min;
            s.lambda_max = options_.clause_lambda_max;
            s.decay_ratio = options_.clause_decay_ratio;
            s.tau = options_.tau;
            s.ema_decay = options_.ema_decay;
            states.push_back(s);
        }
        return states;
    }

    BatchBuild build(Tape& tape, const ConstraintGraph::Batch& batch) override {
        BatchBuild bb;
        std::vector<Value> probs(static_cast<std::size_t>(formula_.num_vars));
        std::vector<char> in_batch(static_cast<std::size_t>(formula_.num_vars), 0);
        for (int v : batch.vertices) {
            Value logit = encoder_.encode(
                tape, params_, v,
                features_.empty() ? TensorValue() : features_[static_cast<std::size_t>(v)])[0];
            Value p = tape.sigmoid(logit);
            probs[static_cast<std::size_t>(v)] = p;
            in_batch[static_cast<std::size_t>(v)] = 1;
            TermInstance entropy_term;
            entropy_term.value = bernoulli_entropy(tape, p);
            entropy_term.state_id = v;
            entropy_term.violation = entropy_term.value.item();
            bb.local_terms.push_back(entropy_term);
        }
        // Unit clauses act on a single variable: local penalties.
        for (int c : unit_clauses_) {
            const int lit = formula_.clauses[static_cast<std::size_t>(c)][0];
            const int v = std::abs(lit) - 1;
            if (!in_batch[static_cast<std::size_t>(v)]) continue;
            bb.local_terms.push_back(clause_term(
                tape, formula_.clauses[static_cast<std::size_t>(c)], probs, formula_.num_vars + c));
        }
        for (int cid : batch.constraint_ids) {
            const int c = clause_of_constraint_[static_cast<std::size_t>(cid)];
            bb.global_terms.push_back(clause_term(
                tape, formula_.clauses[static_cast<std::size_t>(c)], probs, formula_.num_vars + c));
        }
        return bb;
    }

    std::vector<int> decode() const override {
        std::vector<int> out(static_cast<std::size_t>(formula_.num_vars));
        Tape scratch;
        for (int v = 0; v < formula_.num_vars; ++v) {
            Value logit = encoder_.encode_detached(
                scratch, params_, v,
                features_.empty() ? TensorValue() : features_[static_cast<std::size_t>(v)])[0];
            // p > 0.5 iff logit > 0; the tie p = 0.5 decodes to false.
            out[static_cast<std::size_t>(v)] = logit.data()[0] > 0.0 ? 1 : 0;
        }
        return out;
    }

    static Assignment to_assignment(const CnfFormula& f, const std::vector<int>& decoded) {
        Assignment a;
        a.values.assign(static_cast<std::size_t>(f.num_vars) + 1, false);
        for (int v = 0; v < f.num_vars; ++v)
            a.values[static_cast<std::size_t>(v) + 1] = decoded[static_cast<std::size_t>(v)] != 0;
        return a;
    }

    bool verify(const std::vector<int>& assignment) const override {
        return sat::verify(formula_, to_assignment(formula_, assignment));
    }

    int violation_count(const std::vector<int>& assignment) const override {
        return unsatisfied_clauses(formula_, to_assignment(formula_, assignment));
    }

private:
    TermInstance clause_term(Tape& tape, const std::vector<int>& clause,
                             const std::vector<Value>& probs, int state_id) const {
        std::vector<Value> contributions;
        contributions.reserve(clause.size());
        for (int lit : clause) {
            Value p = probs[static_cast<std::size_t>(std::abs(lit) - 1)];
            contributions.push_back(lit > 0 ? p : 1.0 - p);
        }
        SatClauseTerm term =
            sat_clause_term(tape, std::span<const Value>(contributions), options_.clause_alpha);
        TermInstance out;
        out.value = term.penalty;
        out.state_id = state_id;
        // Satisfiability under the hard decode, not the relaxed sum: a clause
        // whose sum hovers near 1 with every literal fractional must keep its
        // weight growing until one literal decisively exceeds 1/2.
        double best = 0.0;
        for (const Value& c : contributions) best = std::max(best, c.item());
        out.violation = best > 0.5 + options_.satisfaction_margin ? 0.0 : 1.0;
        return out;
    }

    TensorValue var_features(int var) const {
        // Normalized occurrence counts of the positive and negated literal.
        TensorValue f = TensorValue::zeros({2});
        for (const auto& clause : formula_.clauses)
            for (int lit : clause) {
                if (lit == var) f.data[0] += 1.0;
                if (lit == -var) f.data[1] += 1.0;
            }
        const double scale = 1.0 / std::max<std::size_t>(1, formula_.clauses.size());
        f.data[0] *= scale;
        f.data[1] *= scale;
        return f;
    }

    CnfFormula formula_;
    DriverOptions options_;
    std::vector<int> unit_clauses_;
    std::vector<int> clause_of_constraint_;
    ConstraintGraph graph_;
    ParamStore params_;
    Encoder encoder_;
    std::vector<TensorValue> features_;
};

}  // namespace drnet::sat
