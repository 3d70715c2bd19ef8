#include "dagrag/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dagrag/errors.hpp"

namespace dagrag {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& block, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : block.items()) {
        (void)value;
        if (!known.contains(key)) {
            throw ConfigError("unknown key \"" + key + "\" in " + where + " config");
        }
    }
}

template <typename T>
T get_field(const json& block, const std::string& key, const T& fallback,
            const std::string& where) {
    if (!block.contains(key)) return fallback;
    try {
        return block.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key \"" + key + "\" in " + where + " config has the wrong type");
    }
}

EngineConfig parse_engine(const json& block) {
    reject_unknown_keys(block,
                        {"top_k", "max_rounds", "max_augmentations", "strategy", "graph_pruning",
                         "context_pruning", "token_budget", "max_graph_nodes"},
                        "engine");
    EngineConfig cfg;
    cfg.top_k = get_field<std::size_t>(block, "top_k", cfg.top_k, "engine");
    cfg.max_rounds = get_field<std::size_t>(block, "max_rounds", cfg.max_rounds, "engine");
    cfg.max_augmentations =
        get_field<std::size_t>(block, "max_augmentations", cfg.max_augmentations, "engine");
    if (block.contains("strategy")) {
        cfg.strategy =
            strategy_from_string(get_field<std::string>(block, "strategy", "", "engine"));
    }
    cfg.graph_pruning = get_field<bool>(block, "graph_pruning", cfg.graph_pruning, "engine");
    cfg.context_pruning =
        get_field<bool>(block, "context_pruning", cfg.context_pruning, "engine");
    cfg.token_budget = get_field<long long>(block, "token_budget", cfg.token_budget, "engine");
    cfg.max_graph_nodes =
        get_field<std::size_t>(block, "max_graph_nodes", cfg.max_graph_nodes, "engine");

    if (cfg.top_k < 1) throw ConfigError("engine top_k must be at least 1");
    if (cfg.max_rounds < 1) throw ConfigError("engine max_rounds must be at least 1");
    if (cfg.token_budget < 1) throw ConfigError("engine token_budget must be at least 1");
    if (cfg.max_graph_nodes < 1) throw ConfigError("engine max_graph_nodes must be at least 1");
    return cfg;
}

ProviderConfig parse_provider(const json& block, const std::string& where) {
    reject_unknown_keys(block,
                        {"kind", "base_url", "model", "api_key_env", "fixtures", "timeout_ms",
                         "requests_per_minute", "temperature", "seed", "max_tokens"},
                        where);
    ProviderConfig cfg;
    cfg.kind = get_field<std::string>(block, "kind", cfg.kind, where);
    cfg.base_url = get_field<std::string>(block, "base_url", cfg.base_url, where);
    cfg.model = get_field<std::string>(block, "model", cfg.model, where);
    cfg.api_key_env = get_field<std::string>(block, "api_key_env", cfg.api_key_env, where);
    cfg.fixtures = get_field<std::string>(block, "fixtures", cfg.fixtures, where);
    cfg.timeout_ms = get_field<int>(block, "timeout_ms", cfg.timeout_ms, where);
    cfg.requests_per_minute = get_field<std::size_t>(block, "requests_per_minute",
                                                     cfg.requests_per_minute, where);
    cfg.temperature = get_field<double>(block, "temperature", cfg.temperature, where);
    cfg.seed = get_field<long long>(block, "seed", cfg.seed, where);
    cfg.max_tokens = get_field<long long>(block, "max_tokens", cfg.max_tokens, where);

    if (cfg.kind == "scripted") {
        if (cfg.fixtures.empty()) {
            throw ConfigError(where + " config with kind \"scripted\" needs a fixtures path");
        }
    } else if (cfg.kind == "http") {
        if (cfg.base_url.empty()) {
            throw ConfigError(where + " config with kind \"http\" needs a base_url");
        }
        if (cfg.model.empty()) {
            throw ConfigError(where + " config with kind \"http\" needs a model");
        }
    } else {
        throw ConfigError(where + " config kind must be \"http\" or \"scripted\", got \"" +
                          cfg.kind + "\"");
    }
    if (cfg.timeout_ms < 1) throw ConfigError(where + " timeout_ms must be at least 1");
    if (cfg.max_tokens < 1) throw ConfigError(where + " max_tokens must be at least 1");
    return cfg;
}

RetrieverConfig parse_retriever(const json& block) {
    reject_unknown_keys(block, {"index_dir", "dense", "backend_url", "embed_model"}, "retriever");
    RetrieverConfig cfg;
    cfg.index_dir = get_field<std::string>(block, "index_dir", cfg.index_dir, "retriever");
    cfg.dense = get_field<bool>(block, "dense", cfg.dense, "retriever");
    cfg.backend_url = get_field<std::string>(block, "backend_url", cfg.backend_url, "retriever");
    cfg.embed_model = get_field<std::string>(block, "embed_model", cfg.embed_model, "retriever");
    if (cfg.dense && cfg.backend_url.empty()) {
        throw ConfigError("retriever config with dense=true needs a backend_url");
    }
    return cfg;
}

}  // namespace

std::string to_string(Strategy strategy) {
    return strategy == Strategy::with_replacement ? "with_replacement" : "without_replacement";
}

Strategy strategy_from_string(const std::string& text) {
    if (text == "with_replacement") return Strategy::with_replacement;
    if (text == "without_replacement") return Strategy::without_replacement;
    throw ConfigError("unknown strategy \"" + text +
                      "\" (expected \"with_replacement\" or \"without_replacement\")");
}

RunConfig parse_run_config(const std::string& json_text) {
    json parsed;
    try {
        parsed = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!parsed.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown_keys(parsed, {"engine", "provider", "judge", "retriever"}, "top-level");
    if (!parsed.contains("provider")) throw ConfigError("config needs a provider block");

    RunConfig cfg;
    if (parsed.contains("engine")) cfg.engine = parse_engine(parsed["engine"]);
    cfg.provider = parse_provider(parsed["provider"], "provider");
    cfg.judge =
        parsed.contains("judge") ? parse_provider(parsed["judge"], "judge") : cfg.provider;
    if (parsed.contains("retriever")) cfg.retriever = parse_retriever(parsed["retriever"]);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str());
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config) {
    if (config.kind == "scripted") {
        return std::make_unique<ScriptedProvider>(ScriptedProvider::from_file(config.fixtures));
    }
    HttpProviderOptions options;
    options.base_url = config.base_url;
    options.model = config.model;
    options.api_key_env = config.api_key_env;
    options.timeout_ms = config.timeout_ms;
    options.requests_per_minute = config.requests_per_minute;
    return std::make_unique<HttpProvider>(std::move(options));
}

}  // namespace dagrag
