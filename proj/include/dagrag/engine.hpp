#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dagrag/config.hpp"
#include "dagrag/dag.hpp"
#include "dagrag/llm.hpp"
#include "dagrag/prompts.hpp"
#include "dagrag/retriever.hpp"
#include "dagrag/trace.hpp"

namespace dagrag {

// Rolling summary of everything retrieved so far: always one string, never a
// chunk list. version counts updates.
struct MemoryState {
    std::string summary;
    std::size_t version = 0;
};

struct FinalAnswer {
    std::string text;
    std::vector<SubAnswer> sub_answers;
};

// Backstop on memory growth in both pruning modes, in normalized tokens.
inline constexpr std::size_t kMemoryTokenCap = 2000;

// Word budget the summarization prompt asks for; the token cap above backs
// it up when the model ignores the instruction.
inline constexpr std::size_t kMemoryWordTarget = 300;

using RetrievalFn = std::function<std::vector<ScoredPassage>(const CorpusIndex&,
                                                             const std::string&, std::size_t)>;

// Replaces each {id} reference in `text` with the answer of the resolved
// subproblem carrying that id. Unresolved or unknown references stay as
// written. Inserted answers are never rescanned.
std::string substitute_answers(const std::string& text, const std::vector<SubAnswer>& resolved);

// One Engine instance runs one query at a time; run concurrent queries on
// separate instances sharing the index and a thread-safe provider.
class Engine {
  public:
    Engine(const EngineConfig& config, const CorpusIndex& index, Provider& provider);

    // Default retrieval is BM25 over the index; tests inject spies and the
    // CLI injects the dense backend here.
    void set_retrieval_fn(RetrievalFn fn);
    void set_completion_defaults(double temperature, long long seed, long long max_tokens);

    struct Decomposition {
        std::vector<std::string> subproblems;
        std::vector<std::pair<std::size_t, std::size_t>> edges;
    };

    struct AugmentSuggestion {
        std::string subproblem;
        std::vector<std::string> parents;
    };

    // Strict-JSON reply {"subproblems": [...], "edges": [[i,j], ...]}; one
    // repair round-trip on a malformed reply, then DecompositionParseError.
    // A decomposition larger than max_graph_nodes is truncated.
    Decomposition decompose(const std::string& query);

    // Singleton groups return their text (with resolved answers substituted)
    // without an LLM call; larger groups make exactly one call, replying
    // {"query": "..."}. Throws EmptyGroup or MergeParseError.
    std::string merge_rank(const std::vector<Subproblem>& group,
                           const std::vector<SubAnswer>& resolved, std::size_t rank);

    // No chunks → mem unchanged, no call. With context pruning the model
    // rewrites the summary; without it the raw passage text is appended.
    // Both paths hard-truncate to kMemoryTokenCap.
    MemoryState summarize_memory(const MemoryState& mem,
                                 const std::vector<ScoredPassage>& chunks,
                                 const std::string& query, std::size_t rank);

    // One call answering every group member from memory alone, replying
    // {"answers": [{"id", "answer"}]}. Extra ids are ignored; a member
    // without an answer is MissingAnswer. Throws ResolveParseError.
    std::vector<SubAnswer> resolve_rank(const std::vector<Subproblem>& group,
                                        const MemoryState& mem, const std::string& query,
                                        std::size_t rank, std::size_t round);

    // Asks whether a missing subproblem blocks the query, replying
    // {"augment", "subproblem", "parents"}. Returns nothing without calling
    // when the augmentation or node cap is already reached. Throws
    // AugmentParseError.
    std::optional<AugmentSuggestion> maybe_augment(const std::string& query,
                                                   const DependencyGraph& graph,
                                                   const std::vector<SubAnswer>& resolved,
                                                   const MemoryState& mem, std::size_t round,
                                                   std::size_t augmentations_done);

    // Final answer from the query, rank-ordered sub-answers, and memory.
    // Throws NoEvidence when both are empty.
    FinalAnswer compose(const std::string& query, const std::vector<SubAnswer>& resolved,
                        const MemoryState& mem);

    // The full pipeline. Token budget exhaustion mid-run is not an error:
    // the trace gets a note and compose runs over the evidence so far. Any
    // stage error is recorded in the trace (with its stage) and rethrown;
    // the partial trace stays available through last_trace().
    std::pair<FinalAnswer, RunTrace> run_query(const std::string& query);

    const RunTrace& last_trace() const noexcept { return run_.trace; }
    const EngineConfig& config() const noexcept { return config_; }

  private:
    struct RunState {
        bool active = false;
        bool budget_exempt = false;
        RunTrace trace;
        TokenUsage used;
        std::vector<StageCall>* sink = nullptr;
    };

    ProviderResponse call(TemplateName tpl, const std::string& key,
                          const std::map<std::string, std::string>& bindings,
                          const std::vector<ChatTurn>& extra_turns = {});
    FinalAnswer run_pipeline(const std::string& query);
    bool ask_proceed(const std::vector<Subproblem>& group, const MemoryState& mem,
                     std::size_t round);
    void note(const std::string& text);
    void snapshot(const std::string& label, const DependencyGraph& graph,
                  const ExecutionPlan& plan);

    EngineConfig config_;
    const CorpusIndex& index_;
    Provider& provider_;
    RetrievalFn retrieval_;
    double temperature_ = 0.0;
    long long seed_ = 42;
    long long max_tokens_ = 1024;
    std::string current_stage_;
    RunState run_;
};

}  // namespace dagrag
