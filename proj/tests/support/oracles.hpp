#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dagrag/retriever.hpp"

namespace testsupport {

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// Longest-path ranks by exhaustive relaxation: sweep every edge n times so
// any acyclic graph reaches its fixpoint. Independent of the library's
// ready-queue scheduler.
std::vector<std::size_t> brute_force_ranks(std::size_t n, const EdgeList& edges);

// Cycle test by peeling: repeatedly delete nodes without incoming edges;
// a cycle is whatever survives.
bool has_cycle_by_peeling(std::size_t n, const EdgeList& edges);

// BM25 scored straight from the normalized passage texts (no inverted
// index), with the same per-term accumulation order as the library so
// equal inputs give bitwise-equal scores. Ties break by id ascending.
std::vector<dagrag::ScoredPassage> brute_force_bm25(const dagrag::CorpusIndex& index,
                                                    const std::string& query, std::size_t k);

}  // namespace testsupport
