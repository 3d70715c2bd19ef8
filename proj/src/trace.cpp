#include "dagrag/trace.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dagrag/errors.hpp"

namespace dagrag {

namespace {

using nlohmann::json;

json usage_to_json(const TokenUsage& usage) {
    return {{"prompt_tokens", usage.prompt_tokens},
            {"completion_tokens", usage.completion_tokens},
            {"total_tokens", usage.total_tokens}};
}

TokenUsage usage_from_json(const json& j) {
    TokenUsage usage;
    usage.prompt_tokens = j.at("prompt_tokens").get<long long>();
    usage.completion_tokens = j.at("completion_tokens").get<long long>();
    usage.total_tokens = j.at("total_tokens").get<long long>();
    return usage;
}

json calls_to_json(const std::vector<StageCall>& calls) {
    json arr = json::array();
    for (const auto& call : calls) {
        arr.push_back({{"stage", call.stage},
                       {"usage", usage_to_json(call.usage)},
                       {"latency_ms", call.latency_ms}});
    }
    return arr;
}

std::vector<StageCall> calls_from_json(const json& arr) {
    std::vector<StageCall> calls;
    for (const auto& j : arr) {
        calls.push_back({j.at("stage").get<std::string>(), usage_from_json(j.at("usage")),
                         j.value("latency_ms", 0LL)});
    }
    return calls;
}

json answers_to_json(const std::vector<SubAnswer>& answers) {
    json arr = json::array();
    for (const auto& a : answers) {
        arr.push_back({{"id", a.id}, {"answer", a.answer}, {"round", a.round}});
    }
    return arr;
}

std::vector<SubAnswer> answers_from_json(const json& arr) {
    std::vector<SubAnswer> answers;
    for (const auto& j : arr) {
        answers.push_back({j.at("id").get<std::string>(), j.at("answer").get<std::string>(),
                           j.at("round").get<std::size_t>()});
    }
    return answers;
}

Origin origin_from_string(const std::string& text) {
    if (text == "decomposition") return Origin::decomposition;
    if (text == "augmentation") return Origin::augmentation;
    throw MalformedRecord("unknown node origin \"" + text + "\"");
}

json config_to_json(const EngineConfig& cfg) {
    return {{"top_k", cfg.top_k},
            {"max_rounds", cfg.max_rounds},
            {"max_augmentations", cfg.max_augmentations},
            {"strategy", to_string(cfg.strategy)},
            {"graph_pruning", cfg.graph_pruning},
            {"context_pruning", cfg.context_pruning},
            {"token_budget", cfg.token_budget},
            {"max_graph_nodes", cfg.max_graph_nodes}};
}

EngineConfig config_from_json(const json& j) {
    EngineConfig cfg;
    cfg.top_k = j.at("top_k").get<std::size_t>();
    cfg.max_rounds = j.at("max_rounds").get<std::size_t>();
    cfg.max_augmentations = j.at("max_augmentations").get<std::size_t>();
    cfg.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    cfg.graph_pruning = j.at("graph_pruning").get<bool>();
    cfg.context_pruning = j.at("context_pruning").get<bool>();
    cfg.token_budget = j.at("token_budget").get<long long>();
    cfg.max_graph_nodes = j.at("max_graph_nodes").get<std::size_t>();
    return cfg;
}

void scrub_timing(json& node) {
    if (node.is_object()) {
        node.erase("latency_ms");
        node.erase("wall_ms");
        node.erase("avg_seconds");
        for (auto& [key, value] : node.items()) {
            (void)key;
            scrub_timing(value);
        }
    } else if (node.is_array()) {
        for (auto& value : node) scrub_timing(value);
    }
}

}  // namespace

bool RunTrace::has_note(const std::string& needle) const noexcept {
    for (const auto& note : notes) {
        if (note.find(needle) != std::string::npos) return true;
    }
    return false;
}

std::string to_jsonl(const RunTrace& trace) {
    std::ostringstream out;
    out << json{{"type", "header"},
                {"format_version", RunTrace::format_version},
                {"query", trace.query},
                {"config", config_to_json(trace.config)}}
               .dump()
        << "\n";

    for (const auto& snapshot : trace.graphs) {
        json nodes = json::array();
        for (std::size_t i = 0; i < snapshot.nodes.size(); ++i) {
            nodes.push_back({{"id", snapshot.nodes[i].id},
                             {"text", snapshot.nodes[i].text},
                             {"origin", to_string(snapshot.nodes[i].origin)},
                             {"rank", snapshot.ranks[i]}});
        }
        json edges = json::array();
        for (const auto& e : snapshot.edges) edges.push_back({{"from", e.from}, {"to", e.to}});
        out << json{{"type", "graph"}, {"label", snapshot.label}, {"nodes", nodes},
                    {"edges", edges}}
                   .dump()
            << "\n";
    }

    for (const auto& call : trace.calls) {
        out << json{{"type", "call"},
                    {"stage", call.stage},
                    {"usage", usage_to_json(call.usage)},
                    {"latency_ms", call.latency_ms}}
                   .dump()
            << "\n";
    }

    for (const auto& round : trace.rounds) {
        json retrieved = json::array();
        for (const auto& ref : round.retrieved) {
            retrieved.push_back({{"id", ref.id}, {"score", ref.score}});
        }
        out << json{{"type", "round"},
                    {"round", round.round},
                    {"rank", round.rank},
                    {"group", round.group},
                    {"merged_query", round.merged_query},
                    {"retrieved", retrieved},
                    {"memory_before", round.memory_before},
                    {"memory_after", round.memory_after},
                    {"sub_answers", answers_to_json(round.sub_answers)},
                    {"calls", calls_to_json(round.calls)}}
                   .dump()
            << "\n";
    }

    for (const auto& aug : trace.augmentations) {
        out << json{{"type", "augmentation"},
                    {"round", aug.round},
                    {"accepted", aug.accepted},
                    {"subproblem", aug.subproblem},
                    {"parents", aug.parents},
                    {"reason", aug.reason},
                    {"calls", calls_to_json(aug.calls)}}
                   .dump()
            << "\n";
    }

    for (const auto& note : trace.notes) {
        out << json{{"type", "note"}, {"text", note}}.dump() << "\n";
    }

    if (trace.error) {
        out << json{{"type", "error"},
                    {"stage", trace.error->stage},
                    {"error_type", trace.error->error_type},
                    {"message", trace.error->message}}
                   .dump()
            << "\n";
    }

    out << json{{"type", "footer"},
                {"final_answer", trace.final_answer},
                {"sub_answers", answers_to_json(trace.final_sub_answers)},
                {"usage", usage_to_json(trace.total_usage)},
                {"wall_ms", trace.wall_ms},
                {"rounds", trace.rounds.size()}}
               .dump()
        << "\n";
    return out.str();
}

RunTrace trace_from_jsonl(std::istream& in) {
    RunTrace trace;
    bool have_header = false;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw MalformedRecord("trace line " + std::to_string(line_no) + ": " + e.what(),
                                  line_no);
        }
        const std::string type = rec.value("type", "");
        try {
            if (type == "header") {
                if (rec.at("format_version").get<int>() != RunTrace::format_version) {
                    throw MalformedRecord("unsupported trace format_version", line_no);
                }
                trace.query = rec.at("query").get<std::string>();
                trace.config = config_from_json(rec.at("config"));
                have_header = true;
            } else if (type == "graph") {
                GraphSnapshot snapshot;
                snapshot.label = rec.at("label").get<std::string>();
                for (const auto& n : rec.at("nodes")) {
                    snapshot.nodes.push_back({n.at("id").get<std::string>(),
                                              n.at("text").get<std::string>(),
                                              origin_from_string(n.at("origin").get<std::string>())});
                    snapshot.ranks.push_back(n.at("rank").get<std::size_t>());
                }
                for (const auto& e : rec.at("edges")) {
                    snapshot.edges.push_back(
                        {e.at("from").get<std::string>(), e.at("to").get<std::string>()});
                }
                trace.graphs.push_back(std::move(snapshot));
            } else if (type == "call") {
                trace.calls.push_back({rec.at("stage").get<std::string>(),
                                       usage_from_json(rec.at("usage")),
                                       rec.value("latency_ms", 0LL)});
            } else if (type == "round") {
                RoundRecord round;
                round.round = rec.at("round").get<std::size_t>();
                round.rank = rec.at("rank").get<std::size_t>();
                round.group = rec.at("group").get<std::vector<std::string>>();
                round.merged_query = rec.at("merged_query").get<std::string>();
                for (const auto& r : rec.at("retrieved")) {
                    round.retrieved.push_back(
                        {r.at("id").get<std::string>(), r.at("score").get<double>()});
                }
                round.memory_before = rec.at("memory_before").get<std::string>();
                round.memory_after = rec.at("memory_after").get<std::string>();
                round.sub_answers = answers_from_json(rec.at("sub_answers"));
                round.calls = calls_from_json(rec.at("calls"));
                trace.rounds.push_back(std::move(round));
            } else if (type == "augmentation") {
                AugmentationEvent aug;
                aug.round = rec.at("round").get<std::size_t>();
                aug.accepted = rec.at("accepted").get<bool>();
                aug.subproblem = rec.at("subproblem").get<std::string>();
                aug.parents = rec.at("parents").get<std::vector<std::string>>();
                aug.reason = rec.at("reason").get<std::string>();
                aug.calls = calls_from_json(rec.at("calls"));
                trace.augmentations.push_back(std::move(aug));
            } else if (type == "note") {
                trace.notes.push_back(rec.at("text").get<std::string>());
            } else if (type == "error") {
                trace.error = TraceError{rec.at("stage").get<std::string>(),
                                         rec.at("error_type").get<std::string>(),
                                         rec.at("message").get<std::string>()};
            } else if (type == "footer") {
                trace.final_answer = rec.at("final_answer").get<std::string>();
                trace.final_sub_answers = answers_from_json(rec.at("sub_answers"));
                trace.total_usage = usage_from_json(rec.at("usage"));
                trace.wall_ms = rec.value("wall_ms", 0LL);
            } else {
                throw MalformedRecord("trace line " + std::to_string(line_no) +
                                          ": unknown record type \"" + type + "\"",
                                      line_no);
            }
        } catch (const json::exception& e) {
            throw MalformedRecord("trace line " + std::to_string(line_no) + ": " + e.what(),
                                  line_no);
        }
    }
    if (!have_header) throw MalformedRecord("trace has no header record");
    return trace;
}

RunTrace trace_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    return trace_from_jsonl(in);
}

void write_trace_file(const RunTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open trace file " + path + " for writing");
    out << to_jsonl(trace);
    if (!out) throw IoError("failed writing trace file " + path);
}

RunTrace read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file " + path);
    return trace_from_jsonl(in);
}

std::string strip_timing_fields(const std::string& text) {
    // Whole-document JSON first (reports); JSONL otherwise (traces).
    try {
        json doc = json::parse(text);
        scrub_timing(doc);
        return doc.dump(2) + "\n";
    } catch (const json::exception&) {
    }
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw MalformedRecord(std::string("strip_timing_fields: ") + e.what());
        }
        scrub_timing(rec);
        out << rec.dump() << "\n";
    }
    return out.str();
}

}  // namespace dagrag
