#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dagrag {

enum class Origin {
    decomposition,
    augmentation,
};

std::string to_string(Origin origin);

// One subquestion of a decomposed query. `id` is unique within its graph.
struct Subproblem {
    std::string id;
    std::string text;
    Origin origin = Origin::decomposition;
};

// Directed dependency: `to` cannot be answered before `from`.
struct DependencyEdge {
    std::string from;
    std::string to;

    friend bool operator==(const DependencyEdge&, const DependencyEdge&) = default;
};

// Immutable after construction; augmentation returns a new graph.
struct DependencyGraph {
    std::vector<Subproblem> nodes;
    std::vector<DependencyEdge> edges;

    const Subproblem* find(std::string_view id) const noexcept;
    bool has_node(std::string_view id) const noexcept;
};

// Rank schedule: group g holds exactly the nodes with rank g, ranks are
// contiguous from 0, and every edge goes from a lower rank to a higher one.
struct ExecutionPlan {
    std::vector<std::vector<std::string>> rank_groups;
    std::unordered_map<std::string, std::size_t> rank_of;
};

// Assigns fresh ids p1..pn in input order and deduplicates repeated edges.
// Throws EmptyDecomposition, EmptySubproblemText, or InvalidEdge (self-loop
// or out-of-bounds index).
DependencyGraph build_graph(const std::vector<std::string>& subproblems,
                            const std::vector<std::pair<std::size_t, std::size_t>>& dependencies);

// Throws CycleError carrying one witness cycle (first and last id equal)
// when the graph has a directed cycle; returns normally otherwise.
void check_acyclic(const DependencyGraph& g);

// rank(v) = 0 for roots, else 1 + max rank over parents. Nodes inside a
// group keep graph insertion order. Re-checks acyclicity and throws
// CycleError if violated.
ExecutionPlan build_plan(const DependencyGraph& g);

// Appends one node with origin=augmentation plus edges from each parent
// into it, and places the node in a fresh rank group after the current
// last one. Existing node ranks never change. Throws UnknownParent or
// EmptySubproblemText.
std::pair<DependencyGraph, ExecutionPlan> augment_graph(const DependencyGraph& g,
                                                        const ExecutionPlan& plan,
                                                        const std::string& new_subproblem,
                                                        const std::vector<std::string>& parents);

// Parent ids of `v` in edge insertion order. Throws UnknownNode.
std::vector<std::string> parents_of(const DependencyGraph& g, std::string_view v);

}  // namespace dagrag
