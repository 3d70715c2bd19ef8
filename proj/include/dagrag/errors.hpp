#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dagrag {

// Base type for every failure the library raises. `stage` is filled in by the
// engine when the error surfaces inside run_query, so callers can report which
// pipeline stage failed without losing the concrete error type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    std::string stage;
};

// --- graph construction and scheduling ---

struct EmptyDecomposition : Error {
    using Error::Error;
};

struct InvalidEdge : Error {
    using Error::Error;
};

struct CycleError : Error {
    CycleError(const std::string& msg, std::vector<std::string> witness)
        : Error(msg), cycle(std::move(witness)) {}
    // One witness cycle as an ordered node-id list; first and last id match.
    std::vector<std::string> cycle;
};

struct UnknownParent : Error {
    using Error::Error;
};

struct EmptySubproblemText : Error {
    using Error::Error;
};

struct UnknownNode : Error {
    using Error::Error;
};

// --- corpus ingestion and retrieval ---

struct MalformedRecord : Error {
    MalformedRecord(const std::string& msg, long long line_no = -1)
        : Error(msg), line(line_no) {}
    long long line;  // 1-based input line, -1 when not applicable
};

struct DuplicateId : Error {
    DuplicateId(const std::string& msg, long long line_no = -1)
        : Error(msg), line(line_no) {}
    long long line;
};

struct EmptyPassage : Error {
    EmptyPassage(const std::string& msg, long long line_no = -1)
        : Error(msg), line(line_no) {}
    long long line;
};

struct EmptyQuery : Error {
    using Error::Error;
};

struct BackendUnavailable : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

// Filesystem-level failure (unreadable corpus, unwritable index directory).
struct IoError : Error {
    using Error::Error;
};

// --- prompt rendering and providers ---

struct MissingBinding : Error {
    MissingBinding(const std::string& msg, std::string name)
        : Error(msg), placeholder(std::move(name)) {}
    std::string placeholder;
};

struct ProviderError : Error {
    ProviderError(const std::string& msg, int http_status = 0, std::string response_body = "")
        : Error(msg), status(http_status), body(std::move(response_body)) {}
    int status;
    std::string body;
};

// 401/403 from the provider, or a configured API key variable that is unset.
struct ProviderAuthError : ProviderError {
    using ProviderError::ProviderError;
};

struct Timeout : Error {
    using Error::Error;
};

struct BudgetExceeded : Error {
    using Error::Error;
};

struct FixtureMiss : Error {
    FixtureMiss(const std::string& msg, std::string tpl, std::string k)
        : Error(msg), template_name(std::move(tpl)), key(std::move(k)) {}
    std::string template_name;
    std::string key;
};

// --- structured model output ---

struct DecompositionParseError : Error {
    using Error::Error;
};

struct MergeParseError : Error {
    using Error::Error;
};

struct ResolveParseError : Error {
    using Error::Error;
};

struct AugmentParseError : Error {
    using Error::Error;
};

struct ProceedParseError : Error {
    using Error::Error;
};

struct MissingAnswer : Error {
    MissingAnswer(const std::string& msg, std::string subproblem_id)
        : Error(msg), id(std::move(subproblem_id)) {}
    std::string id;
};

struct NoEvidence : Error {
    using Error::Error;
};

struct EmptyGroup : Error {
    using Error::Error;
};

// --- evaluation ---

struct EmptyGold : Error {
    using Error::Error;
};

struct NoTraces : Error {
    using Error::Error;
};

struct DatasetParseError : Error {
    DatasetParseError(const std::string& msg, long long line_no = -1)
        : Error(msg), line(line_no) {}
    long long line;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace dagrag
