#pragma once

#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnet/tape.hpp"

// Entropy-based continuous relaxations of discrete constraints. Every
// function records a differentiable scalar penalty on the caller's tape;
// minimizing the penalty drives the underlying categorical variables toward
// a feasible hard assignment.

namespace drnet {

enum class TermKind : std::uint8_t {
    cardinality,
    all_different,
    sparsity,
    sat_clause,
    custom_edge,
};

// Softmax-parameterized distribution over k discrete choices. Frozen
// categoricals (hard clues) carry constant probs and no logits.
struct Categorical {
    Value logits;  // invalid for frozen cells
    Value probs;

    static Categorical from_logits(Tape& tape, Value logits) {
        return Categorical{logits, tape.softmax(logits)};
    }

    static Categorical frozen_onehot(Tape& tape, int support, int hot) {
        TensorValue p = TensorValue::zeros({support});
        p.data[static_cast<std::size_t>(hot)] = 1.0;
        return Categorical{Value{}, tape.constant(p)};
    }

    int support() const { return probs.val().dim(0); }
};

// Members of one constrained set S (row / column / box / clause).
struct ConstrainedSet {
    std::vector<int> member_ids;

    int arity() const { return static_cast<int>(member_ids.size()); }
};

inline void warn(const std::string& msg) {
    std::fprintf(stderr, "[drnet] warning: %s\n", msg.c_str());
}

// H(P) = -sum_j P_j log P_j. log is floored so collapsed distributions give
// exactly 0 instead of NaN.
inline Value entropy(Tape& tape, Value probs) {
    return tape.neg(tape.sum(tape.mul(probs, tape.log(probs))));
}

// Exactly-one selection: entropy of the categorical; 0 iff one-hot.
inline Value cardinality_penalty(Tape& tape, const Categorical& p) {
    return entropy(tape, p.probs);
}

// All-Different over a constrained set: log|S| - H(P̄_S) with
// P̄_S,j = (1/|S|) sum_{i in S} P_{i,j}. Zero iff the averaged distribution
// is uniform; combined with zero member entropies that means the members
// form a permutation.
inline Value all_different_penalty(Tape& tape, std::span<const Value> member_probs) {
    if (member_probs.size() < 2)
        throw std::invalid_argument("all_different_penalty: need at least 2 members");
    const int arity = static_cast<int>(member_probs.size());
    const int support = member_probs[0].val().dim(0);
    for (const Value& m : member_probs) {
        if (m.val().dim(0) != support)
            throw std::invalid_argument(
                "all_different_penalty: member support mismatch " +
                std::to_string(m.val().dim(0)) + " vs " + std::to_string(support));
    }
    if (support != arity)
        throw std::invalid_argument("all_different_penalty: support size " +
                                    std::to_string(support) + " != set arity " +
                                    std::to_string(arity));
    Value avg = tape.add_n(member_probs) * (1.0 / arity);
    return tape.constant(std::log(static_cast<double>(arity))) - entropy(tape, avg);
}

inline Value all_different_penalty(Tape& tape, std::span<const Categorical> members) {
    std::vector<Value> probs;
    probs.reserve(members.size());
    for (const Categorical& m : members) probs.push_back(m.probs);
    return all_different_penalty(tape, std::span<const Value>(probs));
}

// k-sparsity: hinge max(0, H(P) - c). c must sit below log k, where k is the
// sparsity cap (how many entries may be active), not the support size.
// sparsity_cap < 0 means the cap is not known at this call site.
inline Value sparsity_penalty(Tape& tape, Value probs, double c, int sparsity_cap = -1) {
    const int support = probs.val().dim(0);
    if (c < 0.0)
        throw std::invalid_argument("sparsity_penalty: negative threshold c");
    if (sparsity_cap >= 0 && c >= std::log(static_cast<double>(sparsity_cap)))
        throw std::invalid_argument("sparsity_penalty: c must be < log(k), got c=" +
                                    std::to_string(c) + " with k=" +
                                    std::to_string(sparsity_cap));
    if (c >= std::log(static_cast<double>(support))) {
        // H(P) <= log(support) <= c: the hinge can never fire.
        if (sparsity_cap >= 0 && support <= sparsity_cap)
            throw std::invalid_argument(
                "sparsity_penalty: vacuous threshold c >= log(support) with support <= k");
        warn("sparsity_penalty: c >= log(support size) makes the hinge vacuous");
    }
    return tape.relu(entropy(tape, probs) - c);
}

struct SatClauseTerm {
    Value penalty;
    Value clause_sum;  // sum of literal contributions; satisfied iff >= 1
};

// Relaxed clause over literal contributions (P_i for a positive literal,
// 1 - P_i for a negated one). With s the clause sum, the penalty is the
// V-shape max(1 - s, alpha * (s - 1)): pull s up while the clause is
// unsatisfied, gently push it back toward 1 once it is over-satisfied.
inline SatClauseTerm sat_clause_term(Tape& tape, std::span<const Value> contributions,
                                     double alpha) {
    if (contributions.empty())
        throw std::invalid_argument("sat_clause_penalty: empty clause is unsatisfiable");
    Value s = contributions.size() == 1 ? contributions[0] : tape.add_n(contributions);
    // max(a, b) = a + relu(b - a) with a = 1-s, b = alpha*(s-1).
    Value one_minus_s = 1.0 - s;
    Value penalty = one_minus_s + tape.relu((1.0 + alpha) * (s - 1.0));
    return SatClauseTerm{penalty, s};
}

inline Value sat_clause_penalty(Tape& tape, std::span<const Value> contributions,
                                double alpha) {
    return sat_clause_term(tape, contributions, alpha).penalty;
}

// Entropy of a Bernoulli with success probability p (a scalar on the tape,
// normally sigmoid of a logit).
inline Value bernoulli_entropy(Tape& tape, Value p) {
    Value q = 1.0 - p;
    return tape.neg(tape.mul(p, tape.log(p)) + tape.mul(q, tape.log(q)));
}

}  // namespace drnet
