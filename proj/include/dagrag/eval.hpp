#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "dagrag/config.hpp"
#include "dagrag/engine.hpp"
#include "dagrag/llm.hpp"
#include "dagrag/retriever.hpp"
#include "dagrag/trace.hpp"

namespace dagrag {

struct EvalExample {
    std::string id;
    std::string question;
    std::string gold;  // never empty
    std::string type;  // optional label ("bridge", "comparison", ...), may be empty
};

// 1.0 iff the normalized gold occurs as a contiguous word run inside the
// normalized generated text (so "Newark" does not match gold "New York").
// Throws EmptyGold when gold normalizes to nothing.
double string_accuracy(const std::string& gold, const std::string& generated);

struct JudgeResult {
    double correct = 0.0;  // 0 or 1
    bool flagged = false;  // judge never produced a plain yes/no
    TokenUsage usage;
};

// Binary verdict from the judge provider. A reply other than yes/no gets one
// retry; a second non-conforming reply scores 0 with the flag set.
JudgeResult llm_accuracy(Provider& judge, const std::string& question, const std::string& gold,
                         const std::string& generated);

// Word-set Jaccard similarity over normalized text; two empty sets score 1.
double jaccard(const std::string& a, const std::string& b);

struct JaccardMatrix {
    std::size_t dim = 0;
    std::vector<double> values;  // row-major, dim * dim

    double at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
    std::string to_csv() const;
};

// Entry (i, j) averages jaccard(merged query of round i+1, of round j+1)
// over the traces that have both rounds; shorter traces are masked out of
// the cells they cannot cover. Throws NoTraces on an empty list.
JaccardMatrix subquery_similarity_matrix(const std::vector<RunTrace>& traces);

// JSONL records {"id", "question", "answer", "type"?}; blank lines skipped.
// Throws DatasetParseError with the offending line number.
std::vector<EvalExample> load_dataset_jsonl(std::istream& in);
std::vector<EvalExample> load_dataset_file(const std::string& path);

struct ExampleRecord {
    std::string id;
    std::string type;
    std::string generated;
    double string_correct = 0.0;
    double llm_correct = 0.0;
    bool judge_flagged = false;
    TokenUsage usage;        // engine calls only
    TokenUsage judge_usage;  // judge calls, kept out of the engine budget
    long long wall_ms = 0;
    std::size_t rounds = 0;
    bool failed = false;
    std::string error_stage;
    std::string error_message;
};

struct TypeAggregate {
    std::size_t count = 0;
    double string_accuracy = 0.0;
    double llm_accuracy = 0.0;
};

// Means run over every record; failed examples score 0 on both accuracies
// and contribute whatever partial usage their run accumulated.
struct Aggregates {
    std::size_t examples = 0;
    std::size_t failures = 0;
    double string_accuracy = 0.0;
    double llm_accuracy = 0.0;
    double avg_tokens = 0.0;
    double avg_seconds = 0.0;
    double avg_rounds = 0.0;
    std::map<std::string, TypeAggregate> by_type;  // untyped records under ""
};

Aggregates recompute_aggregates(const std::vector<ExampleRecord>& records);

struct MetricsReport {
    std::vector<ExampleRecord> records;  // dataset order regardless of concurrency
    Aggregates aggregates;

    std::string to_json() const;   // stable key order; metadata documents the rules
    std::string to_table() const;  // aligned aggregate table for stdout
};

struct EvalOutcome {
    MetricsReport report;
    std::vector<RunTrace> traces;  // parallel to records; failures keep partial traces
};

// Called once per finished example, serialized across workers.
using EvalProgressFn =
    std::function<void(std::size_t done, std::size_t total, const ExampleRecord&)>;

// Runs every example (up to `concurrency` in flight) on worker-local Engine
// instances sharing the index and providers. Per-example failures land in
// the records; only setup errors throw.
EvalOutcome run_eval(const std::vector<EvalExample>& dataset, const RunConfig& config,
                     const CorpusIndex& index, Provider& provider, Provider& judge,
                     std::size_t concurrency, const RetrievalFn& retrieval = {},
                     const EvalProgressFn& progress = {});

struct StrategyComparison {
    MetricsReport without_replacement;
    JaccardMatrix without_matrix;
    MetricsReport with_replacement;
    JaccardMatrix with_matrix;

    std::string to_json() const;
    std::string to_table() const;  // paired accuracy and cost columns
};

// Same dataset under both sampling strategies; everything else of the base
// config is kept as given.
StrategyComparison compare_strategies(const std::vector<EvalExample>& dataset,
                                      const RunConfig& config, const CorpusIndex& index,
                                      Provider& provider, Provider& judge,
                                      std::size_t concurrency, const RetrievalFn& retrieval = {},
                                      const EvalProgressFn& progress = {});

}  // namespace dagrag
