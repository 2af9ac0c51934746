#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drnet/constraint_graph.hpp"
#include "drnet/params.hpp"
#include "drnet/rng.hpp"
#include "drnet/tape.hpp"

// Constraint-aware stochastic gradient descent: sample a batch from the
// constraint graph, assemble the penalized objective, backprop, step the
// parameters, and multiplicatively adjust penalty weights by satisfaction.
// Decoding + independent verification runs periodically; a solve never
// reports success on its own penalty values.

namespace drnet {

// Per-constraint weight with multiplicative adjustment. A term is satisfied
// when its violation measure is at or below tau; satisfied terms relax their
// weight, violated ones tighten it. Scheduled states (e.g. the SAT literal
// entropy weight) instead grow by a fixed factor on a fixed interval.
struct PenaltyState {
    enum class Rule : std::uint8_t { adaptive, scheduled };

    double lambda = 1.0;
    double tau = 0.01;
    double lambda_min = 1e-3;
    double lambda_max = 1e3;
    double satisfaction_ema = 0.0;
    double ema_decay = 0.9;
    Rule rule = Rule::adaptive;
    double schedule_factor = 1.0;
    long schedule_interval = 0;
    // Decay slowdown: satisfied terms relax with eta * decay_ratio. At 1 the
    // rule is the symmetric multiplicative update; below 1 weights ratchet,
    // which keeps pressure on constraint clusters whose violated members
    // rotate faster than any one weight can grow.
    double decay_ratio = 1.0;

    void adjust(double violation, double eta) {
        const bool satisfied = violation <= tau;
        if (rule == Rule::adaptive) {
            lambda = satisfied ? std::max(lambda_min, lambda / (1.0 + eta * decay_ratio))
                               : std::min(lambda_max, lambda * (1.0 + eta));
        }
        satisfaction_ema = ema_decay * satisfaction_ema + (1.0 - ema_decay) * (satisfied ? 1.0 : 0.0);
    }

    void tick_schedule(long iteration) {
        if (rule != Rule::scheduled || schedule_interval <= 0) return;
        if (iteration > 0 && iteration % schedule_interval == 0)
            lambda = std::min(lambda_max, lambda * schedule_factor);
    }
};

// Alg. step 6: one violation value per state.
inline void adjust_weights(std::vector<PenaltyState>& states,
                           const std::vector<double>& violations, double eta) {
    if (states.size() != violations.size())
        throw std::invalid_argument("adjust_weights: one violation per state required");
    for (std::size_t i = 0; i < states.size(); ++i) states[i].adjust(violations[i], eta);
}

enum class UpdateRule : std::uint8_t { sgd_momentum, adam };

struct SolveConfig {
    double learning_rate = 0.1;
    double lr_decay = 1.0;  // multiplied in every lr_decay_interval iterations
    long lr_decay_interval = 0;
    // Warm cycles: every warm_cycle iterations the learning rate, penalty
    // weights and momentum buffers reset to their initial state while the
    // parameters theta carry over — a reheat within one attempt, not a
    // restart. Scheduled weights anneal relative to the cycle start.
    long warm_cycle = 0;
    UpdateRule update_rule = UpdateRule::sgd_momentum;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    long max_iterations = 2000;
    int batch_budget = 1 << 28;
    BatchMode batch_mode = BatchMode::component;

    double weight_adjust_eta = 0.05;
    long adjust_interval = 1;
    double ema_decay = 0.9;
    double lambda_init = 1.0;
    double lambda_min = 1e-3;
    double lambda_max = 1e3;
    double tau_entropy = 0.01;

    long decode_interval = 20;
    // Give up the attempt after this many decodes without improvement in the
    // decoded violation count (0 = run to max_iterations).
    long convergence_window = 0;

    int restart_limit = 0;
    std::uint64_t seed = 0;

    bool trace = false;
    std::string trace_path;
};

enum class SolveStatus : std::uint8_t { solved, unsolved, budget_exhausted };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::solved: return "solved";
        case SolveStatus::unsolved: return "unsolved";
        case SolveStatus::budget_exhausted: return "budget-exhausted";
    }
    return "?";
}

struct SolveResult {
    SolveStatus status = SolveStatus::unsolved;
    std::vector<int> assignment;
    long iterations = 0;
    int restarts = 0;
    double final_objective = 0.0;
};

// One differentiable penalty scheduled for this batch: the scalar on the
// tape, the penalty state it draws its weight from, and a plain-double
// violation measure for the weight adjustment (computed from forward values,
// never differentiated).
struct TermInstance {
    Value value;
    int state_id = -1;
    double violation = 0.0;
};

struct BatchBuild {
    std::vector<Value> reconstruction;  // one per batch point; may be empty
    std::vector<TermInstance> local_terms;
    std::vector<TermInstance> global_terms;
};

// Task adapter: supplies the constraint graph, parameters, term builders,
// decoder, and the independent verifier.
class InstanceDriver {
public:
    virtual ~InstanceDriver() = default;

    virtual const ConstraintGraph& graph() const = 0;
    virtual ParamStore& params() = 0;
    virtual void init_params(Rng& rng) = 0;
    virtual std::vector<PenaltyState> initial_penalty_states() const = 0;
    virtual BatchBuild build(Tape& tape, const ConstraintGraph::Batch& batch) = 0;

    // Runs right after the weight adjustment; drivers may rescale groups of
    // weights (keeping their ratios) so no group inflates away the others.
    virtual void post_adjust(std::vector<PenaltyState>& /*states*/) {}

    // Optional projection applied after each parameter update (e.g. clamping
    // probability logits so sigmoids keep usable gradients).
    virtual void project_params() {}

    // Hard assignment from the current parameters (argmax / p > 0.5).
    virtual std::vector<int> decode() const = 0;
    // Exact, optimizer-independent acceptance check.
    virtual bool verify(const std::vector<int>& assignment) const = 0;
    // Number of violated hard constraints; 0 for a verified assignment.
    // Drives stall detection only.
    virtual int violation_count(const std::vector<int>& assignment) const {
        return verify(assignment) ? 0 : 1;
    }
};

namespace detail {

class TraceWriter {
public:
    TraceWriter(const SolveConfig& config, int attempt) {
        if (!config.trace || config.trace_path.empty()) return;
        file_ = std::fopen(config.trace_path.c_str(), attempt == 0 ? "w" : "a");
    }
    ~TraceWriter() {
        if (file_) std::fclose(file_);
    }
    TraceWriter(const TraceWriter&) = delete;
    TraceWriter& operator=(const TraceWriter&) = delete;

    void record(int attempt, long iter, double objective, const BatchBuild& build,
                const std::vector<PenaltyState>& states) {
        if (!file_) return;
        std::fprintf(file_, "{\"attempt\":%d,\"iteration\":%ld,\"objective\":%.10g,\"penalties\":[",
                     attempt, iter, objective);
        bool first = true;
        for (const auto& terms : {&build.local_terms, &build.global_terms})
            for (const TermInstance& t : *terms) {
                std::fprintf(file_, "%s%.10g", first ? "" : ",", t.value.item());
                first = false;
            }
        std::fprintf(file_, "],\"lambda\":[");
        for (std::size_t i = 0; i < states.size(); ++i)
            std::fprintf(file_, "%s%.10g", i ? "," : "", states[i].lambda);
        std::fprintf(file_, "]}\n");
    }

private:
    std::FILE* file_ = nullptr;
};

// Momentum / Adam moment buffers per parameter, allocated on first touch.
// Parameters outside the sampled batch are left untouched (lazy updates).
struct UpdateBuffers {
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
        long step = 0;
    };
    std::vector<Slot> slots;

    void reset(std::size_t count) {
        slots.assign(count, {});
    }

    void apply(const SolveConfig& config, double lr, int param_id,
               std::vector<double>& x, std::span<const double> g) {
        Slot& slot = slots[static_cast<std::size_t>(param_id)];
        if (slot.m.empty()) slot.m.assign(x.size(), 0.0);
        if (config.update_rule == UpdateRule::sgd_momentum) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                slot.m[i] = config.momentum * slot.m[i] + g[i];
                x[i] -= lr * slot.m[i];
            }
        } else {
            if (slot.v.empty()) slot.v.assign(x.size(), 0.0);
            ++slot.step;
            const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(slot.step));
            const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(slot.step));
            for (std::size_t i = 0; i < x.size(); ++i) {
                slot.m[i] = config.adam_beta1 * slot.m[i] + (1.0 - config.adam_beta1) * g[i];
                slot.v[i] = config.adam_beta2 * slot.v[i] + (1.0 - config.adam_beta2) * g[i] * g[i];
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                x[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
            }
        }
    }
};

// (1/m) (sum_i L_i + sum local lambda*psi) + sum_j lambda_j * psi_j.
inline Value assemble_weighted_objective(Tape& tape, const BatchBuild& build,
                                         const std::vector<PenaltyState>& states,
                                         std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("assemble_objective: empty batch");
    std::vector<Value> pointwise;
    pointwise.reserve(build.reconstruction.size() + build.local_terms.size());
    for (const Value& r : build.reconstruction) pointwise.push_back(r);
    for (const TermInstance& t : build.local_terms)
        pointwise.push_back(tape.constant(states[static_cast<std::size_t>(t.state_id)].lambda) *
                            t.value);
    std::optional<Value> objective;
    if (!pointwise.empty())
        objective = tape.add_n(pointwise) * (1.0 / static_cast<double>(batch_size));
    if (!build.global_terms.empty()) {
        std::vector<Value> weighted;
        weighted.reserve(build.global_terms.size());
        for (const TermInstance& t : build.global_terms)
            weighted.push_back(tape.constant(states[static_cast<std::size_t>(t.state_id)].lambda) *
                               t.value);
        Value global_sum = tape.add_n(weighted);
        objective = objective ? *objective + global_sum : global_sum;
    }
    if (!objective) throw std::invalid_argument("assemble_objective: no terms");
    return *objective;
}

// Several terms may share a penalty state within one batch (e.g. a common
// entropy weight); their violations are averaged before the adjustment.
inline void adjust_states_for_batch(std::vector<PenaltyState>& states, const BatchBuild& build,
                                    double eta) {
    thread_local std::vector<double> sum, cnt;
    sum.assign(states.size(), 0.0);
    cnt.assign(states.size(), 0.0);
    for (const auto& terms : {&build.local_terms, &build.global_terms})
        for (const TermInstance& t : *terms) {
            sum[static_cast<std::size_t>(t.state_id)] += t.violation;
            cnt[static_cast<std::size_t>(t.state_id)] += 1.0;
        }
    for (std::size_t i = 0; i < states.size(); ++i)
        if (cnt[i] > 0.0) states[i].adjust(sum[i] / cnt[i], eta);
}

}  // namespace detail

// One optimization attempt with pre-seeded RNG; used by solve and
// solve_with_restarts.
inline SolveResult solve_attempt(InstanceDriver& driver, const SolveConfig& config, Rng rng,
                                 int attempt_index = 0) {
    driver.init_params(rng);
    std::vector<PenaltyState> states = driver.initial_penalty_states();
    detail::UpdateBuffers buffers;
    buffers.reset(driver.params().size());
    detail::TraceWriter trace(config, attempt_index);

    Tape tape;
    SolveResult result;
    double lr = config.learning_rate;
    int best_violations = std::numeric_limits<int>::max();
    long decodes_since_improvement = 0;

    const auto try_decode = [&](long iter) -> bool {
        std::vector<int> assignment = driver.decode();
        const int violations = driver.violation_count(assignment);
        if (violations == 0 && driver.verify(assignment)) {
            result.status = SolveStatus::solved;
            result.assignment = std::move(assignment);
            result.iterations = iter;
            return true;
        }
        if (violations < best_violations) {
            best_violations = violations;
            decodes_since_improvement = 0;
        } else {
            ++decodes_since_improvement;
        }
        return false;
    };

    for (long iter = 1; iter <= config.max_iterations; ++iter) {
        const long cycle_iter =
            config.warm_cycle > 0 ? (iter - 1) % config.warm_cycle + 1 : iter;
        if (config.warm_cycle > 0 && cycle_iter == 1 && iter > 1) {
            states = driver.initial_penalty_states();
            buffers.reset(driver.params().size());
            lr = config.learning_rate;
        }
        ConstraintGraph::Batch batch =
            driver.graph().sample_batch(rng, config.batch_budget, config.batch_mode);
        tape.reset();
        driver.params().clear_bindings();
        BatchBuild build = driver.build(tape, batch);

        // Step 6 before step 7: weights are adjusted from forward values,
        // then enter the objective as constants.
        for (PenaltyState& s : states) s.tick_schedule(cycle_iter);
        if (config.adjust_interval > 0 && iter % config.adjust_interval == 0) {
            detail::adjust_states_for_batch(states, build, config.weight_adjust_eta);
            driver.post_adjust(states);
        }

        Value objective =
            detail::assemble_weighted_objective(tape, build, states, batch.vertices.size());
        const double objective_value = objective.item();
        if (!std::isfinite(objective_value)) {
            result.status = SolveStatus::unsolved;
            result.iterations = iter;
            return result;
        }
        result.final_objective = objective_value;
        trace.record(attempt_index, iter, objective_value, build, states);

        tape.backward(objective);
        for (const auto& [param_id, leaf] : driver.params().bound())
            buffers.apply(config, lr, param_id, driver.params().value(param_id).data,
                          tape.grads(leaf));
        driver.project_params();

        if (config.lr_decay_interval > 0 && cycle_iter % config.lr_decay_interval == 0)
            lr *= config.lr_decay;

        if (config.decode_interval > 0 && iter % config.decode_interval == 0) {
            if (try_decode(iter)) return result;
            if (config.convergence_window > 0 &&
                decodes_since_improvement >= config.convergence_window) {
                result.status = SolveStatus::unsolved;
                result.iterations = iter;
                return result;
            }
        }
    }

    if (try_decode(config.max_iterations)) return result;
    result.status = SolveStatus::budget_exhausted;
    result.iterations = config.max_iterations;
    result.assignment = driver.decode();
    return result;
}

inline SolveResult solve(InstanceDriver& driver, const SolveConfig& config) {
    return solve_attempt(driver, config, Rng(derive_seed(config.seed, 0)), 0);
}

// Up to restart_limit + 1 independent attempts with fresh parameter
// initialization and fresh RNG streams; first verified success wins.
inline SolveResult solve_with_restarts(InstanceDriver& driver, const SolveConfig& config) {
    SolveResult last;
    long total_iterations = 0;
    for (int attempt = 0; attempt <= config.restart_limit; ++attempt) {
        last = solve_attempt(driver, config, Rng(derive_seed(config.seed, static_cast<std::uint64_t>(attempt))),
                             attempt);
        total_iterations += last.iterations;
        last.restarts = attempt;
        if (last.status == SolveStatus::solved) break;
    }
    last.iterations = total_iterations;
    return last;
}

}  // namespace drnet
