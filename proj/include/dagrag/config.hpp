#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "dagrag/llm.hpp"

namespace dagrag {

// without_replacement discards each rank group once its unified query is
// issued; with_replacement lets the model re-attempt the group it just
// resolved (kept for the strategy-comparison experiment).
enum class Strategy { with_replacement, without_replacement };

std::string to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& text);

struct EngineConfig {
    std::size_t top_k = 3;
    std::size_t max_rounds = 8;
    std::size_t max_augmentations = 2;
    Strategy strategy = Strategy::without_replacement;
    bool graph_pruning = true;
    bool context_pruning = true;
    long long token_budget = 20000;
    std::size_t max_graph_nodes = 16;

    friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

struct ProviderConfig {
    std::string kind = "http";  // "http" or "scripted"
    std::string base_url;
    std::string model;
    std::string api_key_env;
    std::string fixtures;  // fixture file path, scripted kind only
    int timeout_ms = 60000;
    std::size_t requests_per_minute = 0;
    double temperature = 0.0;
    long long seed = 42;
    long long max_tokens = 1024;
};

struct RetrieverConfig {
    std::string index_dir;  // default when the CLI gets no --index
    bool dense = false;
    std::string backend_url;  // embedding backend, dense mode only
    std::string embed_model;
};

struct RunConfig {
    EngineConfig engine;
    ProviderConfig provider;
    ProviderConfig judge;  // defaults to the provider block when absent
    RetrieverConfig retriever;
};

// Strict parse: unknown keys anywhere are a ConfigError, as are out-of-range
// values (top_k, max_rounds, token_budget, max_graph_nodes must be >= 1).
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);  // adds IoError

std::unique_ptr<Provider> make_provider(const ProviderConfig& config);

}  // namespace dagrag
