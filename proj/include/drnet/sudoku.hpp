#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "drnet/constraint_graph.hpp"
#include "drnet/encoder.hpp"
#include "drnet/optimizer.hpp"
#include "drnet/relaxations.hpp"
#include "drnet/rng.hpp"

// Sudoku completion driver: 81 digit categoricals, 81 cardinality terms and
// 27 All-Different sets (9x9), plus an exact backtracking oracle used for
// benchmark generation and independent verification. The same code handles
// the 4x4 grids of the overlapping-Sudoku toy.

namespace drnet::sudoku {

struct SudokuPuzzle {
    int side = 9;            // 4 or 9
    std::vector<int> grid;   // side*side cells, 0 = blank

    int box_edge() const { return side == 9 ? 3 : 2; }
    int cell_count() const { return side * side; }

    int clue_count() const {
        int n = 0;
        for (int v : grid) n += v != 0;
        return n;
    }
};

// Row, column and box index sets; 27 sets for 9x9, 12 for 4x4 (the four 2x2
// corner boxes).
inline std::vector<std::vector<int>> constraint_sets(int side) {
    const int box = side == 9 ? 3 : 2;
    std::vector<std::vector<int>> sets;
    for (int r = 0; r < side; ++r) {
        std::vector<int> s(static_cast<std::size_t>(side));
        for (int c = 0; c < side; ++c) s[static_cast<std::size_t>(c)] = r * side + c;
        sets.push_back(std::move(s));
    }
    for (int c = 0; c < side; ++c) {
        std::vector<int> s(static_cast<std::size_t>(side));
        for (int r = 0; r < side; ++r) s[static_cast<std::size_t>(r)] = r * side + c;
        sets.push_back(std::move(s));
    }
    for (int br = 0; br < side; br += box)
        for (int bc = 0; bc < side; bc += box) {
            std::vector<int> s;
            for (int r = 0; r < box; ++r)
                for (int c = 0; c < box; ++c) s.push_back((br + r) * side + (bc + c));
            sets.push_back(std::move(s));
        }
    return sets;
}

inline bool clues_consistent(const SudokuPuzzle& p) {
    for (const auto& set : constraint_sets(p.side)) {
        unsigned seen = 0;
        for (int cell : set) {
            const int d = p.grid[static_cast<std::size_t>(cell)];
            if (d == 0) continue;
            const unsigned bit = 1u << d;
            if (seen & bit) return false;
            seen |= bit;
        }
    }
    return true;
}

// 81 (or 16) characters from {'.', '0', '1'..'9'}; whitespace ignored.
inline SudokuPuzzle parse(const std::string& text) {
    std::vector<int> cells;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) continue;
        if (ch == '.' || ch == '0')
            cells.push_back(0);
        else if (ch >= '1' && ch <= '9')
            cells.push_back(ch - '0');
        else
            throw std::invalid_argument(std::string("sudoku parse: bad character '") + ch + "'");
    }
    SudokuPuzzle p;
    if (cells.size() == 81)
        p.side = 9;
    else if (cells.size() == 16)
        p.side = 4;
    else
        throw std::invalid_argument("sudoku parse: expected 81 (or 16) cells, got " +
                                    std::to_string(cells.size()));
    for (int v : cells)
        if (v > p.side)
            throw std::invalid_argument("sudoku parse: digit " + std::to_string(v) +
                                        " out of range for side " + std::to_string(p.side));
    p.grid = std::move(cells);
    if (!clues_consistent(p)) throw std::invalid_argument("sudoku parse: conflicting clues");
    return p;
}

inline std::string to_line(const SudokuPuzzle& p) {
    std::string s;
    s.reserve(p.grid.size());
    for (int v : p.grid) s += v == 0 ? '.' : static_cast<char>('0' + v);
    return s;
}

// Exact assignment check: clues respected, every set a permutation.
inline bool valid_solution(const SudokuPuzzle& p, const std::vector<int>& grid) {
    if (static_cast<int>(grid.size()) != p.cell_count()) return false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 1 || grid[i] > p.side) return false;
        if (p.grid[i] != 0 && p.grid[i] != grid[i]) return false;
    }
    for (const auto& set : constraint_sets(p.side)) {
        unsigned seen = 0;
        for (int cell : set) {
            const unsigned bit = 1u << grid[static_cast<std::size_t>(cell)];
            if (seen & bit) return false;
            seen |= bit;
        }
    }
    return true;
}

inline int violation_count(const SudokuPuzzle& p, const std::vector<int>& grid) {
    int violations = 0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (p.grid[i] != 0 && p.grid[i] != grid[i]) ++violations;
    for (const auto& set : constraint_sets(p.side)) {
        unsigned seen = 0;
        bool dup = false;
        for (int cell : set) {
            const int d = grid[static_cast<std::size_t>(cell)];
            if (d < 1 || d > p.side) {
                dup = true;
                break;
            }
            const unsigned bit = 1u << d;
            if (seen & bit) dup = true;
            seen |= bit;
        }
        violations += dup;
    }
    return violations;
}

// Backtracking solver with bitmask pruning and fewest-candidates-first cell
// selection. Complete: used to generate benchmarks, count solutions, and
// cross-check the DRNet verifier.
class OracleSolver {
public:
    explicit OracleSolver(const SudokuPuzzle& puzzle) : puzzle_(puzzle) {}

    std::optional<SudokuPuzzle> solve() { return run(nullptr); }

    std::optional<SudokuPuzzle> solve_randomized(Rng& rng) { return run(&rng); }

    // Number of solutions, stopping at limit.
    long count_solutions(long limit) {
        limit_ = limit;
        found_ = 0;
        State st;
        if (!init_state(st)) return 0;
        count_recurse(st);
        return found_;
    }

private:
    struct State {
        std::vector<int> grid;
        std::vector<unsigned> row_used, col_used, box_used;
    };

    int side() const { return puzzle_.side; }
    int box_of(int r, int c) const {
        const int b = puzzle_.box_edge();
        return (r / b) * b + c / b;
    }

    bool init_state(State& st) {
        const int n = side();
        st.grid = puzzle_.grid;
        st.row_used.assign(static_cast<std::size_t>(n), 0);
        st.col_used.assign(static_cast<std::size_t>(n), 0);
        st.box_used.assign(static_cast<std::size_t>(n), 0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const int d = st.grid[static_cast<std::size_t>(r * n + c)];
                if (d == 0) continue;
                const unsigned bit = 1u << d;
                if ((st.row_used[r] | st.col_used[c] | st.box_used[box_of(r, c)]) & bit)
                    return false;
                st.row_used[r] |= bit;
                st.col_used[c] |= bit;
                st.box_used[box_of(r, c)] |= bit;
            }
        return true;
    }

    // Cell with fewest candidates; -1 when full, -2 on a dead end.
    int pick_cell(const State& st, unsigned& candidates) const {
        const int n = side();
        int best = -1;
        int best_count = n + 1;
        unsigned best_mask = 0;
        for (int r = 0; r < n && best_count > 1; ++r)
            for (int c = 0; c < n; ++c) {
                if (st.grid[static_cast<std::size_t>(r * n + c)] != 0) continue;
                const unsigned used = st.row_used[r] | st.col_used[c] | st.box_used[box_of(r, c)];
                unsigned mask = 0;
                int count = 0;
                for (int d = 1; d <= n; ++d)
                    if (!(used & (1u << d))) {
                        mask |= 1u << d;
                        ++count;
                    }
                if (count == 0) return -2;
                if (count < best_count) {
                    best_count = count;
                    best = r * n + c;
                    best_mask = mask;
                    if (count == 1) break;
                }
            }
        candidates = best_mask;
        return best;
    }

    bool solve_recurse(State& st, Rng* rng) {
        unsigned candidates = 0;
        const int cell = pick_cell(st, candidates);
        if (cell == -1) return true;
        if (cell == -2) return false;
        const int n = side();
        const int r = cell / n, c = cell % n;
        int order[9];
        int count = 0;
        for (int d = 1; d <= n; ++d)
            if (candidates & (1u << d)) order[count++] = d;
        if (rng)
            for (int i = count; i > 1; --i)
                std::swap(order[i - 1], order[static_cast<int>(rng->below(static_cast<std::uint64_t>(i)))]);
        for (int i = 0; i < count; ++i) {
            const int d = order[i];
            const unsigned bit = 1u << d;
            st.grid[static_cast<std::size_t>(cell)] = d;
            st.row_used[r] |= bit;
            st.col_used[c] |= bit;
            st.box_used[box_of(r, c)] |= bit;
            if (solve_recurse(st, rng)) return true;
            st.grid[static_cast<std::size_t>(cell)] = 0;
            st.row_used[r] &= ~bit;
            st.col_used[c] &= ~bit;
            st.box_used[box_of(r, c)] &= ~bit;
        }
        return false;
    }

    void count_recurse(State& st) {
        if (found_ >= limit_) return;
        unsigned candidates = 0;
        const int cell = pick_cell(st, candidates);
        if (cell == -1) {
            ++found_;
            return;
        }
        if (cell == -2) return;
        const int n = side();
        const int r = cell / n, c = cell % n;
        for (int d = 1; d <= n && found_ < limit_; ++d) {
            if (!(candidates & (1u << d))) continue;
            const unsigned bit = 1u << d;
            st.grid[static_cast<std::size_t>(cell)] = d;
            st.row_used[r] |= bit;
            st.col_used[c] |= bit;
            st.box_used[box_of(r, c)] |= bit;
            count_recurse(st);
            st.grid[static_cast<std::size_t>(cell)] = 0;
            st.row_used[r] &= ~bit;
            st.col_used[c] &= ~bit;
            st.box_used[box_of(r, c)] &= ~bit;
        }
    }

    std::optional<SudokuPuzzle> run(Rng* rng) {
        State st;
        if (!init_state(st)) return std::nullopt;
        if (!solve_recurse(st, rng)) return std::nullopt;
        SudokuPuzzle out = puzzle_;
        out.grid = st.grid;
        return out;
    }

    SudokuPuzzle puzzle_;
    long limit_ = 1;
    long found_ = 0;
};

inline SudokuPuzzle random_full_grid(int side, Rng& rng) {
    SudokuPuzzle empty;
    empty.side = side;
    empty.grid.assign(static_cast<std::size_t>(side * side), 0);
    auto solved = OracleSolver(empty).solve_randomized(rng);
    if (!solved) throw std::logic_error("random_full_grid: unreachable");
    return *solved;
}

// Masks a full grid down to the clue target. Any mask of a valid grid stays
// satisfiable (by that grid), so no uniqueness filtering is applied.
inline SudokuPuzzle mask_to_clues(const SudokuPuzzle& full, int clues, Rng& rng) {
    SudokuPuzzle p = full;
    std::vector<int> order(static_cast<std::size_t>(p.cell_count()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);
    int to_remove = p.cell_count() - clues;
    for (int cell : order) {
        if (to_remove == 0) break;
        p.grid[static_cast<std::size_t>(cell)] = 0;
        --to_remove;
    }
    return p;
}

inline std::vector<SudokuPuzzle> generate_benchmark(int side, int count, int clue_lo, int clue_hi,
                                                    std::uint64_t seed) {
    std::vector<SudokuPuzzle> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const int clues = rng.uniform_int(clue_lo, clue_hi);
        out.push_back(mask_to_clues(random_full_grid(side, rng), clues, rng));
    }
    return out;
}

struct DriverOptions {
    EncoderMode encoder_mode = EncoderMode::free_logits;
    int mlp_hidden = 64;
    double init_stddev = 0.5;

    // Cardinality (cell entropy) weight: scheduled anneal, starting soft so
    // cells explore before collapsing.
    double cell_lambda_init = 0.2;
    double cell_schedule_factor = 1.02;
    long cell_schedule_interval = 50;

    double set_lambda_init = 1.0;  // All-Different weight, adaptive
    double lambda_min = 1e-3;
    double lambda_max = 1e3;
    double tau = 0.01;
    double ema_decay = 0.9;
};

class Driver final : public InstanceDriver {
public:
    explicit Driver(SudokuPuzzle puzzle, DriverOptions options = {})
        : puzzle_(std::move(puzzle)),
          options_(options),
          sets_(constraint_sets(puzzle_.side)) {
        const int cells = puzzle_.cell_count();
        std::vector<GlobalConstraint> constraints;
        constraints.reserve(sets_.size());
        for (std::size_t s = 0; s < sets_.size(); ++s) {
            GlobalConstraint gc;
            gc.members = sets_[s];
            gc.kind = TermKind::all_different;
            gc.penalty_state_id = cells + static_cast<int>(s);
            constraints.push_back(std::move(gc));
        }
        graph_ = ConstraintGraph::build(cells, std::move(constraints));

        LatentLayout layout{{{"digits", puzzle_.side}}};
        if (options_.encoder_mode == EncoderMode::free_logits) {
            encoder_ = Encoder::free_logits(layout, cells, options_.init_stddev);
        } else {
            encoder_ = Encoder::mlp(layout, puzzle_.side + 2, options_.mlp_hidden);
            features_.reserve(static_cast<std::size_t>(cells));
            for (int cell = 0; cell < cells; ++cell) features_.push_back(cell_features(cell));
        }
        encoder_.register_params(params_);
    }

    const SudokuPuzzle& puzzle() const { return puzzle_; }
    const ConstraintGraph& graph() const override { return graph_; }
    ParamStore& params() override { return params_; }

    void init_params(Rng& rng) override { encoder_.init(params_, rng); }

    std::vector<PenaltyState> initial_penalty_states() const override {
        std::vector<PenaltyState> states;
        states.reserve(static_cast<std::size_t>(puzzle_.cell_count()) + sets_.size());
        for (int cell = 0; cell < puzzle_.cell_count(); ++cell) {
            PenaltyState s;
            s.lambda = options_.cell_lambda_init;
            s.rule = PenaltyState::Rule::scheduled;
            s.schedule_factor = options_.cell_schedule_factor;
            s.schedule_interval = options_.cell_schedule_interval;
            apply_common(s);
            states.push_back(s);
        }
        for (std::size_t i = 0; i < sets_.size(); ++i) {
            PenaltyState s;
            s.lambda = options_.set_lambda_init;
            apply_common(s);
            states.push_back(s);
        }
        return states;
    }

    BatchBuild build(Tape& tape, const ConstraintGraph::Batch& batch) override {
        BatchBuild bb;
        std::vector<Value> probs(static_cast<std::size_t>(puzzle_.cell_count()));
        for (int cell : batch.vertices) {
            const int clue = puzzle_.grid[static_cast<std::size_t>(cell)];
            TermInstance term;
            term.state_id = cell;
            if (clue != 0) {
                probs[static_cast<std::size_t>(cell)] =
                    Categorical::frozen_onehot(tape, puzzle_.side, clue - 1).probs;
                term.value = tape.constant(0.0);  // H(one-hot) = 0 exactly
                term.violation = 0.0;
            } else {
                Value logits =
                    encoder_.encode(tape, params_, cell,
                                    features_.empty() ? TensorValue() : features_[static_cast<std::size_t>(cell)])[0];
                Value p = tape.softmax(logits);
                probs[static_cast<std::size_t>(cell)] = p;
                term.value = entropy(tape, p);
                term.violation = term.value.item();
            }
            bb.local_terms.push_back(term);
        }
        for (int cid : batch.constraint_ids) {
            const GlobalConstraint& gc = graph_.constraints()[static_cast<std::size_t>(cid)];
            std::vector<Value> members;
            members.reserve(gc.members.size());
            for (int m : gc.members) members.push_back(probs[static_cast<std::size_t>(m)]);
            TermInstance term;
            term.value = all_different_penalty(tape, std::span<const Value>(members));
            term.state_id = gc.penalty_state_id;
            term.violation = term.value.item();
            bb.global_terms.push_back(term);
        }
        return bb;
    }

    std::vector<int> decode() const override {
        const int cells = puzzle_.cell_count();
        std::vector<int> out(static_cast<std::size_t>(cells));
        Tape scratch;
        for (int cell = 0; cell < cells; ++cell) {
            const int clue = puzzle_.grid[static_cast<std::size_t>(cell)];
            if (clue != 0) {
                out[static_cast<std::size_t>(cell)] = clue;
                continue;
            }
            Value logits = encoder_.encode_detached(
                scratch, params_, cell,
                features_.empty() ? TensorValue() : features_[static_cast<std::size_t>(cell)])[0];
            auto data = logits.data();
            int best = 0;
            for (int d = 1; d < puzzle_.side; ++d)
                if (data[static_cast<std::size_t>(d)] > data[static_cast<std::size_t>(best)])
                    best = d;  // ties resolve to the lowest index
            out[static_cast<std::size_t>(cell)] = best + 1;
        }
        return out;
    }

    bool verify(const std::vector<int>& assignment) const override {
        return valid_solution(puzzle_, assignment);
    }

    int violation_count(const std::vector<int>& assignment) const override {
        return drnet::sudoku::violation_count(puzzle_, assignment);
    }

private:
    void apply_common(PenaltyState& s) const {
        s.tau = options_.tau;
        s.lambda_min = options_.lambda_min;
        s.lambda_max = options_.lambda_max;
        s.ema_decay = options_.ema_decay;
    }

    TensorValue cell_features(int cell) const {
        // One-hot clue (zero vector when blank) + normalized (row, col).
        const int n = puzzle_.side;
        TensorValue f = TensorValue::zeros({n + 2});
        const int clue = puzzle_.grid[static_cast<std::size_t>(cell)];
        if (clue != 0) f.data[static_cast<std::size_t>(clue - 1)] = 1.0;
        f.data[static_cast<std::size_t>(n)] = static_cast<double>(cell / n) / (n - 1);
        f.data[static_cast<std::size_t>(n + 1)] = static_cast<double>(cell % n) / (n - 1);
        return f;
    }

    SudokuPuzzle puzzle_;
    DriverOptions options_;
    std::vector<std::vector<int>> sets_;
    ConstraintGraph graph_;
    ParamStore params_;
    Encoder encoder_;
    std::vector<TensorValue> features_;
};

}  // namespace drnet::sudoku
