#include "dagrag/dag.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>

#include "dagrag/errors.hpp"

namespace dagrag {

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

// Index of each node id in graph insertion order.
std::unordered_map<std::string, std::size_t> index_nodes(const DependencyGraph& g) {
    std::unordered_map<std::string, std::size_t> idx;
    idx.reserve(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) idx.emplace(g.nodes[i].id, i);
    return idx;
}

// Children adjacency by node index, edge order preserved.
std::vector<std::vector<std::size_t>> adjacency(
    const DependencyGraph& g, const std::unordered_map<std::string, std::size_t>& idx) {
    std::vector<std::vector<std::size_t>> adj(g.nodes.size());
    for (const auto& e : g.edges) adj[idx.at(e.from)].push_back(idx.at(e.to));
    return adj;
}

// Iterative DFS; returns one cycle as node indices (first == last) or nullopt.
std::optional<std::vector<std::size_t>> find_cycle(
    const std::vector<std::vector<std::size_t>>& adj) {
    enum class Mark { unseen, on_stack, done };
    const std::size_t n = adj.size();
    std::vector<Mark> mark(n, Mark::unseen);
    std::vector<std::size_t> parent(n, n);

    for (std::size_t start = 0; start < n; ++start) {
        if (mark[start] != Mark::unseen) continue;
        // Frame: node plus position of the next child to visit.
        std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
        mark[start] = Mark::on_stack;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next == adj[node].size()) {
                mark[node] = Mark::done;
                stack.pop_back();
                continue;
            }
            std::size_t child = adj[node][next++];
            if (mark[child] == Mark::done) continue;
            if (mark[child] == Mark::on_stack) {
                // Walk parent links back from `node` to `child`.
                std::vector<std::size_t> cycle{child};
                for (std::size_t v = node; v != child; v = parent[v]) cycle.push_back(v);
                cycle.push_back(child);
                std::reverse(cycle.begin() + 1, cycle.end() - 1);
                return cycle;
            }
            parent[child] = node;
            mark[child] = Mark::on_stack;
            stack.emplace_back(child, 0);
        }
    }
    return std::nullopt;
}

[[noreturn]] void throw_cycle(const DependencyGraph& g, const std::vector<std::size_t>& cycle) {
    std::vector<std::string> ids;
    ids.reserve(cycle.size());
    for (std::size_t i : cycle) ids.push_back(g.nodes[i].id);
    std::string msg = "dependency cycle:";
    for (const auto& id : ids) msg += " " + id;
    throw CycleError(msg, std::move(ids));
}

ExecutionPlan plan_from_ranks(const DependencyGraph& g, const std::vector<std::size_t>& rank) {
    ExecutionPlan plan;
    std::size_t max_rank = 0;
    for (std::size_t r : rank) max_rank = std::max(max_rank, r);
    plan.rank_groups.resize(g.nodes.empty() ? 0 : max_rank + 1);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        plan.rank_groups[rank[i]].push_back(g.nodes[i].id);
        plan.rank_of.emplace(g.nodes[i].id, rank[i]);
    }
    return plan;
}

}  // namespace

std::string to_string(Origin origin) {
    switch (origin) {
        case Origin::decomposition: return "decomposition";
        case Origin::augmentation: return "augmentation";
    }
    throw std::logic_error("unhandled Origin value");
}

const Subproblem* DependencyGraph::find(std::string_view id) const noexcept {
    for (const auto& node : nodes) {
        if (node.id == id) return &node;
    }
    return nullptr;
}

bool DependencyGraph::has_node(std::string_view id) const noexcept {
    return find(id) != nullptr;
}

DependencyGraph build_graph(const std::vector<std::string>& subproblems,
                            const std::vector<std::pair<std::size_t, std::size_t>>& dependencies) {
    if (subproblems.empty()) {
        throw EmptyDecomposition("decomposition produced zero subproblems");
    }
    DependencyGraph g;
    g.nodes.reserve(subproblems.size());
    for (std::size_t i = 0; i < subproblems.size(); ++i) {
        std::string text = trim(subproblems[i]);
        if (text.empty()) {
            throw EmptySubproblemText("subproblem " + std::to_string(i + 1) + " is empty");
        }
        g.nodes.push_back({"p" + std::to_string(i + 1), std::move(text), Origin::decomposition});
    }
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [from, to] : dependencies) {
        if (from >= subproblems.size() || to >= subproblems.size()) {
            throw InvalidEdge("dependency (" + std::to_string(from) + "," + std::to_string(to) +
                              ") is out of bounds for " + std::to_string(subproblems.size()) +
                              " subproblems");
        }
        if (from == to) {
            throw InvalidEdge("self-loop on subproblem " + std::to_string(from));
        }
        if (!seen.insert({from, to}).second) continue;
        g.edges.push_back({g.nodes[from].id, g.nodes[to].id});
    }
    return g;
}

void check_acyclic(const DependencyGraph& g) {
    auto idx = index_nodes(g);
    auto cycle = find_cycle(adjacency(g, idx));
    if (cycle) throw_cycle(g, *cycle);
}

ExecutionPlan build_plan(const DependencyGraph& g) {
    auto idx = index_nodes(g);
    auto adj = adjacency(g, idx);
    if (auto cycle = find_cycle(adj)) throw_cycle(g, *cycle);

    // rank(v) = longest path from any root, computed in topological order.
    std::vector<std::size_t> indegree(g.nodes.size(), 0);
    for (const auto& e : g.edges) ++indegree[idx.at(e.to)];
    std::vector<std::size_t> rank(g.nodes.size(), 0);
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        if (indegree[i] == 0) ready.push_back(i);
    }
    for (std::size_t head = 0; head < ready.size(); ++head) {
        std::size_t u = ready[head];
        for (std::size_t v : adj[u]) {
            rank[v] = std::max(rank[v], rank[u] + 1);
            if (--indegree[v] == 0) ready.push_back(v);
        }
    }
    return plan_from_ranks(g, rank);
}

std::pair<DependencyGraph, ExecutionPlan> augment_graph(const DependencyGraph& g,
                                                        const ExecutionPlan& plan,
                                                        const std::string& new_subproblem,
                                                        const std::vector<std::string>& parents) {
    std::string text = trim(new_subproblem);
    if (text.empty()) throw EmptySubproblemText("augmented subproblem is empty");
    for (const auto& p : parents) {
        if (!g.has_node(p)) throw UnknownParent("unknown parent node: " + p);
    }

    DependencyGraph out = g;
    std::size_t n = g.nodes.size() + 1;
    std::string id = "p" + std::to_string(n);
    while (g.has_node(id)) id = "p" + std::to_string(++n);
    out.nodes.push_back({id, std::move(text), Origin::augmentation});
    std::set<std::string> seen;
    for (const auto& p : parents) {
        if (seen.insert(p).second) out.edges.push_back({p, id});
    }

    ExecutionPlan next = plan;
    next.rank_of.emplace(id, next.rank_groups.size());
    next.rank_groups.push_back({id});
    return {std::move(out), std::move(next)};
}

std::vector<std::string> parents_of(const DependencyGraph& g, std::string_view v) {
    if (!g.has_node(v)) throw UnknownNode("unknown node: " + std::string(v));
    std::vector<std::string> out;
    for (const auto& e : g.edges) {
        if (e.to == v) out.push_back(e.from);
    }
    return out;
}

}  // namespace dagrag
