#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "dagrag/config.hpp"
#include "dagrag/dag.hpp"
#include "dagrag/llm.hpp"

namespace dagrag {

struct SubAnswer {
    std::string id;
    std::string answer;
    std::size_t round = 0;  // round that produced (or last replaced) it

    friend bool operator==(const SubAnswer&, const SubAnswer&) = default;
};

// One LLM call, as charged against the budget.
struct StageCall {
    std::string stage;
    TokenUsage usage;
    long long latency_ms = 0;

    friend bool operator==(const StageCall&, const StageCall&) = default;
};

struct RetrievedRef {
    std::string id;
    double score = 0.0;

    friend bool operator==(const RetrievedRef&, const RetrievedRef&) = default;
};

// One merge → retrieve → summarize → resolve iteration.
struct RoundRecord {
    std::size_t round = 0;  // 1-based, strictly increasing within a trace
    std::size_t rank = 0;
    std::vector<std::string> group;
    std::string merged_query;
    std::vector<RetrievedRef> retrieved;
    std::string memory_before;
    std::string memory_after;
    std::vector<SubAnswer> sub_answers;
    std::vector<StageCall> calls;

    friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct GraphSnapshot {
    std::string label;  // "initial" or "augmentation N"
    std::vector<Subproblem> nodes;
    std::vector<std::size_t> ranks;  // parallel to nodes
    std::vector<DependencyEdge> edges;
};

struct AugmentationEvent {
    std::size_t round = 0;
    bool accepted = false;
    std::string subproblem;
    std::vector<std::string> parents;
    std::string reason;  // why it was declined, empty when accepted
    std::vector<StageCall> calls;
};

struct TraceError {
    std::string stage;
    std::string error_type;
    std::string message;
};

struct RunTrace {
    static constexpr int format_version = 1;

    std::string query;
    EngineConfig config;
    std::vector<GraphSnapshot> graphs;
    std::vector<StageCall> calls;  // decompose and compose; round calls live in rounds
    std::vector<RoundRecord> rounds;
    std::vector<AugmentationEvent> augmentations;
    std::vector<std::string> notes;
    std::optional<TraceError> error;
    std::string final_answer;
    std::vector<SubAnswer> final_sub_answers;
    TokenUsage total_usage;
    long long wall_ms = 0;

    std::size_t round_count() const noexcept { return rounds.size(); }
    bool has_note(const std::string& needle) const noexcept;
};

// JSONL records in order: header, graph*, call/round/augmentation/note/error
// in event order, footer. Object keys are emitted sorted, so equal traces
// serialize identically.
std::string to_jsonl(const RunTrace& trace);
RunTrace trace_from_jsonl(std::istream& in);   // MalformedRecord on bad input
RunTrace trace_from_jsonl(const std::string& text);
void write_trace_file(const RunTrace& trace, const std::string& path);  // IoError
RunTrace read_trace_file(const std::string& path);                      // IoError

// Removes the wall-clock fields (latency_ms, wall_ms, avg_seconds, wall
// times in reports) from any JSON or JSONL text and re-serializes it, for
// byte comparisons of otherwise deterministic artifacts.
std::string strip_timing_fields(const std::string& text);

}  // namespace dagrag
