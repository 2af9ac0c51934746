#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnet/relaxations.hpp"
#include "drnet/rng.hpp"

// Constraint graph over data points: vertices are data points, edges join
// points that share a global constraint. Batch sampling picks whole connected
// components, or self-avoiding sub-paths when components are too large.

namespace drnet {

struct GlobalConstraint {
    int id = 0;
    std::vector<int> members;  // S_j
    TermKind kind = TermKind::all_different;
    double param = 0.0;        // kind-specific (sparsity c, clause alpha, ...)
    int penalty_state_id = -1;
};

enum class BatchMode : std::uint8_t { component, subpath };

class ConstraintGraph {
public:
    struct Batch {
        std::vector<int> vertices;
        std::vector<int> constraint_ids;  // constraints fully inside the batch
    };

    static ConstraintGraph build(int vertex_count, std::vector<GlobalConstraint> constraints) {
        if (vertex_count < 0) throw std::invalid_argument("ConstraintGraph: negative vertex count");
        ConstraintGraph g;
        g.vertex_count_ = vertex_count;
        g.constraints_ = std::move(constraints);
        g.constraints_of_.assign(static_cast<std::size_t>(vertex_count), {});
        g.adjacency_.assign(static_cast<std::size_t>(vertex_count), {});
        for (std::size_t c = 0; c < g.constraints_.size(); ++c) {
            GlobalConstraint& gc = g.constraints_[c];
            gc.id = static_cast<int>(c);
            if (gc.members.size() < 2)
                throw std::invalid_argument("GlobalConstraint " + std::to_string(c) +
                                            ": needs at least 2 members");
            for (int m : gc.members) {
                if (m < 0 || m >= vertex_count)
                    throw std::invalid_argument("GlobalConstraint " + std::to_string(c) +
                                                ": member index " + std::to_string(m) +
                                                " out of range [0, " +
                                                std::to_string(vertex_count) + ")");
                g.constraints_of_[static_cast<std::size_t>(m)].push_back(static_cast<int>(c));
            }
            for (std::size_t i = 0; i < gc.members.size(); ++i)
                for (std::size_t j = i + 1; j < gc.members.size(); ++j) {
                    g.adjacency_[static_cast<std::size_t>(gc.members[i])].push_back(gc.members[j]);
                    g.adjacency_[static_cast<std::size_t>(gc.members[j])].push_back(gc.members[i]);
                }
        }
        for (auto& nbrs : g.adjacency_) {
            std::sort(nbrs.begin(), nbrs.end());
            nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
        }
        g.label_components();
        return g;
    }

    int vertex_count() const { return vertex_count_; }
    const std::vector<GlobalConstraint>& constraints() const { return constraints_; }
    const std::vector<int>& constraints_of(int v) const {
        return constraints_of_[static_cast<std::size_t>(v)];
    }
    const std::vector<int>& neighbors(int v) const {
        return adjacency_[static_cast<std::size_t>(v)];
    }

    int component_count() const { return component_count_; }

    std::vector<std::vector<int>> components() const {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(component_count_));
        for (int v = 0; v < vertex_count_; ++v)
            out[static_cast<std::size_t>(component_of_[static_cast<std::size_t>(v)])].push_back(v);
        return out;
    }

    Batch sample_batch(Rng& rng, int budget, BatchMode mode) const {
        if (budget < 1) throw std::invalid_argument("sample_batch: budget must be >= 1");
        if (vertex_count_ == 0) return {};
        Batch batch;
        if (mode == BatchMode::component) {
            auto comps = components();
            std::vector<int> order(comps.size());
            std::iota(order.begin(), order.end(), 0);
            shuffle(order, rng);
            int taken = 0;
            for (int ci : order) {
                const auto& comp = comps[static_cast<std::size_t>(ci)];
                const int sz = static_cast<int>(comp.size());
                if (taken > 0 && taken + sz > budget) break;
                batch.vertices.insert(batch.vertices.end(), comp.begin(), comp.end());
                taken += sz;
                if (taken >= budget) break;
            }
        } else {
            // Self-avoiding walk from a uniformly random start vertex.
            int v = static_cast<int>(rng.below(static_cast<std::uint64_t>(vertex_count_)));
            std::vector<char> visited(static_cast<std::size_t>(vertex_count_), 0);
            visited[static_cast<std::size_t>(v)] = 1;
            batch.vertices.push_back(v);
            while (static_cast<int>(batch.vertices.size()) < budget) {
                // Reservoir pick over unvisited neighbors.
                int count = 0;
                int pick = -1;
                for (int u : adjacency_[static_cast<std::size_t>(v)])
                    if (!visited[static_cast<std::size_t>(u)]) {
                        ++count;
                        if (rng.below(static_cast<std::uint64_t>(count)) == 0) pick = u;
                    }
                if (count == 0) break;
                visited[static_cast<std::size_t>(pick)] = 1;
                batch.vertices.push_back(pick);
                v = pick;
            }
            std::sort(batch.vertices.begin(), batch.vertices.end());
        }
        collect_inside_constraints(batch);
        return batch;
    }

private:
    static void shuffle(std::vector<int>& xs, Rng& rng) {
        for (std::size_t i = xs.size(); i > 1; --i)
            std::swap(xs[i - 1], xs[rng.below(i)]);
    }

    void label_components() {
        component_of_.assign(static_cast<std::size_t>(vertex_count_), -1);
        component_count_ = 0;
        std::vector<int> stack;
        for (int s = 0; s < vertex_count_; ++s) {
            if (component_of_[static_cast<std::size_t>(s)] >= 0) continue;
            stack.push_back(s);
            component_of_[static_cast<std::size_t>(s)] = component_count_;
            while (!stack.empty()) {
                int v = stack.back();
                stack.pop_back();
                for (int u : adjacency_[static_cast<std::size_t>(v)])
                    if (component_of_[static_cast<std::size_t>(u)] < 0) {
                        component_of_[static_cast<std::size_t>(u)] = component_count_;
                        stack.push_back(u);
                    }
            }
            ++component_count_;
        }
    }

    // Constraints with every member inside the batch; partially covered
    // constraints are skipped for the step.
    void collect_inside_constraints(Batch& batch) const {
        std::vector<char> in_batch(static_cast<std::size_t>(vertex_count_), 0);
        for (int v : batch.vertices) in_batch[static_cast<std::size_t>(v)] = 1;
        std::vector<char> seen(constraints_.size(), 0);
        for (int v : batch.vertices)
            for (int c : constraints_of_[static_cast<std::size_t>(v)]) {
                if (seen[static_cast<std::size_t>(c)]) continue;
                seen[static_cast<std::size_t>(c)] = 1;
                const auto& members = constraints_[static_cast<std::size_t>(c)].members;
                bool inside = true;
                for (int m : members)
                    if (!in_batch[static_cast<std::size_t>(m)]) {
                        inside = false;
                        break;
                    }
                if (inside) batch.constraint_ids.push_back(c);
            }
        std::sort(batch.constraint_ids.begin(), batch.constraint_ids.end());
    }

    int vertex_count_ = 0;
    int component_count_ = 0;
    std::vector<GlobalConstraint> constraints_;
    std::vector<std::vector<int>> adjacency_;
    std::vector<std::vector<int>> constraints_of_;
    std::vector<int> component_of_;
};

}  // namespace drnet
