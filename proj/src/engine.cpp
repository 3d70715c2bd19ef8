#include "dagrag/engine.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <sstream>

#include <cxxabi.h>

#include <json.hpp>

#include "dagrag/errors.hpp"
#include "dagrag/text.hpp"

namespace dagrag {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string error_type_name(const Error& e) {
    int status = 0;
    char* demangled = abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status);
    std::string name = (status == 0 && demangled != nullptr) ? demangled : typeid(e).name();
    std::free(demangled);
    auto pos = name.rfind("::");
    if (pos != std::string::npos) name = name.substr(pos + 2);
    return name;
}

json parse_strict_object(const std::string& content) {
    json parsed = json::parse(trim(content));  // json::exception on failure
    if (!parsed.is_object()) throw std::runtime_error("reply is not a JSON object");
    return parsed;
}

// One call, strict parse + shape validation, one repair round-trip carrying
// the rejection reason, then `fail` raises the stage's typed error.
template <typename CallFn, typename ValidateFn, typename FailFn>
json strict_json_call(CallFn&& do_call, ValidateFn&& validate, FailFn&& fail) {
    auto first = do_call(std::vector<ChatTurn>{});
    std::string problem;
    try {
        json parsed = parse_strict_object(first.content);
        validate(parsed);
        return parsed;
    } catch (const std::exception& e) {
        problem = e.what();
    }
    std::vector<ChatTurn> repair{
        {Role::assistant, first.content},
        {Role::user, "Your reply was rejected: " + problem +
                         ". Reply again with only the strict JSON in the required form."}};
    auto second = do_call(repair);
    try {
        json parsed = parse_strict_object(second.content);
        validate(parsed);
        return parsed;
    } catch (const std::exception& e) {
        fail(std::string(e.what()), second.content);
        throw;  // fail always throws
    }
}

std::string format_passages(const std::vector<ScoredPassage>& chunks) {
    std::ostringstream out;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (i > 0) out << "\n\n";
        out << "[" << chunks[i].passage.id << "]";
        if (!chunks[i].passage.title.empty()) out << " " << chunks[i].passage.title;
        out << "\n" << chunks[i].passage.text;
    }
    return out.str();
}

std::string format_group(const std::vector<Subproblem>& group) {
    std::ostringstream out;
    for (std::size_t i = 0; i < group.size(); ++i) {
        if (i > 0) out << "\n";
        out << group[i].id << ": " << group[i].text;
    }
    return out.str();
}

const SubAnswer* find_answer(const std::vector<SubAnswer>& resolved, const std::string& id) {
    for (const auto& a : resolved) {
        if (a.id == id) return &a;
    }
    return nullptr;
}

void upsert_answers(std::vector<SubAnswer>& into, const std::vector<SubAnswer>& fresh) {
    for (const auto& a : fresh) {
        bool replaced = false;
        for (auto& existing : into) {
            if (existing.id == a.id) {
                existing = a;
                replaced = true;
                break;
            }
        }
        if (!replaced) into.push_back(a);
    }
}

}  // namespace

std::string substitute_answers(const std::string& text, const std::vector<SubAnswer>& resolved) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            auto close = text.find('}', i + 1);
            if (close != std::string::npos) {
                const SubAnswer* hit = find_answer(resolved, text.substr(i + 1, close - i - 1));
                if (hit != nullptr) {
                    out += hit->answer;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += text[i++];
    }
    return out;
}

Engine::Engine(const EngineConfig& config, const CorpusIndex& index, Provider& provider)
    : config_(config), index_(index), provider_(provider) {
    retrieval_ = [](const CorpusIndex& idx, const std::string& query, std::size_t k) {
        return retrieve(idx, query, k);
    };
}

void Engine::set_retrieval_fn(RetrievalFn fn) { retrieval_ = std::move(fn); }

void Engine::set_completion_defaults(double temperature, long long seed, long long max_tokens) {
    temperature_ = temperature;
    seed_ = seed;
    max_tokens_ = max_tokens;
}

ProviderResponse Engine::call(TemplateName tpl, const std::string& key,
                              const std::map<std::string, std::string>& bindings,
                              const std::vector<ChatTurn>& extra_turns) {
    if (run_.active && !run_.budget_exempt && run_.used.total_tokens >= config_.token_budget) {
        throw BudgetExceeded("token budget of " + std::to_string(config_.token_budget) +
                             " exhausted (" + std::to_string(run_.used.total_tokens) +
                             " tokens used)");
    }
    auto turns = render(get_template(tpl), bindings);
    turns.insert(turns.end(), extra_turns.begin(), extra_turns.end());

    CompletionParams params;
    params.temperature = temperature_;
    params.seed = seed_;
    params.max_tokens = max_tokens_;
    params.template_name = to_string(tpl);
    params.fixture_key = key;
    ProviderResponse response = provider_.complete(turns, params);

    if (run_.active) {
        run_.used += response.usage;
        StageCall record{to_string(tpl), response.usage, response.latency_ms};
        if (run_.sink != nullptr) {
            run_.sink->push_back(std::move(record));
        } else {
            run_.trace.calls.push_back(std::move(record));
        }
    }
    return response;
}

Engine::Decomposition Engine::decompose(const std::string& query) {
    if (trim(query).empty()) throw EmptyDecomposition("query is empty");
    auto do_call = [&](const std::vector<ChatTurn>& extra) {
        return call(TemplateName::decompose, "",
                    {{"question", query},
                     {"max_subproblems", std::to_string(config_.max_graph_nodes)}},
                    extra);
    };
    auto validate = [](const json& j) {
        if (!j.contains("subproblems") || !j["subproblems"].is_array()) {
            throw std::runtime_error("missing \"subproblems\" array");
        }
        for (const auto& s : j["subproblems"]) {
            if (!s.is_string() || trim(s.get<std::string>()).empty()) {
                throw std::runtime_error("every subproblem must be a non-empty string");
            }
        }
        if (!j.contains("edges") || !j["edges"].is_array()) {
            throw std::runtime_error("missing \"edges\" array");
        }
        for (const auto& e : j["edges"]) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
                !e[1].is_number_integer() || e[0].get<long long>() < 0 ||
                e[1].get<long long>() < 0) {
                throw std::runtime_error(
                    "every edge must be a pair of non-negative integer indices");
            }
        }
    };
    json parsed = strict_json_call(do_call, validate, [](const std::string& why,
                                                         const std::string& content) {
        throw DecompositionParseError("decompose reply rejected after one repair attempt: " +
                                      why + "; reply was: " + content);
    });

    Decomposition dec;
    for (const auto& s : parsed["subproblems"]) dec.subproblems.push_back(s.get<std::string>());
    if (dec.subproblems.empty()) {
        throw EmptyDecomposition("model decomposed the query into zero subproblems");
    }
    if (dec.subproblems.size() > config_.max_graph_nodes) {
        note("decomposition produced " + std::to_string(dec.subproblems.size()) +
             " subproblems; truncated to the cap of " + std::to_string(config_.max_graph_nodes));
        dec.subproblems.resize(config_.max_graph_nodes);
    }
    for (const auto& e : parsed["edges"]) {
        auto from = e[0].get<std::size_t>();
        auto to = e[1].get<std::size_t>();
        if (from >= dec.subproblems.size() || to >= dec.subproblems.size()) {
            // References into the truncated tail are dropped with it.
            if (parsed["subproblems"].size() > config_.max_graph_nodes &&
                from < parsed["subproblems"].size() && to < parsed["subproblems"].size()) {
                continue;
            }
        }
        dec.edges.emplace_back(from, to);
    }
    return dec;
}

std::string Engine::merge_rank(const std::vector<Subproblem>& group,
                               const std::vector<SubAnswer>& resolved, std::size_t rank) {
    if (group.empty()) throw EmptyGroup("merge got an empty rank group");
    std::vector<std::string> texts;
    texts.reserve(group.size());
    for (const auto& member : group) texts.push_back(substitute_answers(member.text, resolved));
    if (texts.size() == 1) return texts[0];

    std::ostringstream list;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i > 0) list << "\n";
        list << "- " << texts[i];
    }
    auto do_call = [&](const std::vector<ChatTurn>& extra) {
        return call(TemplateName::merge, std::to_string(rank), {{"subproblems", list.str()}},
                    extra);
    };
    auto validate = [](const json& j) {
        if (!j.contains("query") || !j["query"].is_string() ||
            trim(j["query"].get<std::string>()).empty()) {
            throw std::runtime_error("missing non-empty \"query\" string");
        }
    };
    json parsed = strict_json_call(do_call, validate, [](const std::string& why,
                                                         const std::string& content) {
        throw MergeParseError("merge reply rejected after one repair attempt: " + why +
                              "; reply was: " + content);
    });
    return parsed["query"].get<std::string>();
}

MemoryState Engine::summarize_memory(const MemoryState& mem,
                                     const std::vector<ScoredPassage>& chunks,
                                     const std::string& query, std::size_t rank) {
    if (chunks.empty()) return mem;
    const std::string passages = format_passages(chunks);
    if (!config_.context_pruning) {
        std::string merged =
            mem.summary.empty() ? passages : mem.summary + "\n\n" + passages;
        return {truncate_to_tokens(merged, kMemoryTokenCap), mem.version + 1};
    }
    auto response = call(TemplateName::summarize, std::to_string(rank),
                         {{"question", query}, {"memory", mem.summary}, {"passages", passages}});
    return {truncate_to_tokens(trim(response.content), kMemoryTokenCap), mem.version + 1};
}

std::vector<SubAnswer> Engine::resolve_rank(const std::vector<Subproblem>& group,
                                            const MemoryState& mem, const std::string& query,
                                            std::size_t rank, std::size_t round) {
    if (group.empty()) throw EmptyGroup("resolve got an empty rank group");
    auto do_call = [&](const std::vector<ChatTurn>& extra) {
        return call(TemplateName::resolve, std::to_string(rank),
                    {{"question", query},
                     {"memory", mem.summary},
                     {"subproblems", format_group(group)}},
                    extra);
    };
    auto validate = [](const json& j) {
        if (!j.contains("answers") || !j["answers"].is_array()) {
            throw std::runtime_error("missing \"answers\" array");
        }
        for (const auto& entry : j["answers"]) {
            if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string() ||
                !entry.contains("answer") || !entry["answer"].is_string()) {
                throw std::runtime_error(
                    "every answer must be an object with \"id\" and \"answer\" strings");
            }
        }
    };
    json parsed = strict_json_call(do_call, validate, [](const std::string& why,
                                                         const std::string& content) {
        throw ResolveParseError("resolve reply rejected after one repair attempt: " + why +
                                "; reply was: " + content);
    });

    std::map<std::string, std::string> by_id;
    for (const auto& entry : parsed["answers"]) {
        by_id[entry["id"].get<std::string>()] = entry["answer"].get<std::string>();
    }
    std::vector<SubAnswer> out;
    out.reserve(group.size());
    for (const auto& member : group) {
        auto it = by_id.find(member.id);
        if (it == by_id.end()) {
            throw MissingAnswer("resolve reply has no answer for subproblem \"" + member.id +
                                    "\"",
                                member.id);
        }
        out.push_back({member.id, it->second, round});
    }
    return out;
}

std::optional<Engine::AugmentSuggestion> Engine::maybe_augment(
    const std::string& query, const DependencyGraph& graph,
    const std::vector<SubAnswer>& resolved, const MemoryState& mem, std::size_t round,
    std::size_t augmentations_done) {
    if (augmentations_done >= config_.max_augmentations) return std::nullopt;
    if (graph.nodes.size() >= config_.max_graph_nodes) return std::nullopt;

    std::ostringstream answered;
    bool first = true;
    for (const auto& a : resolved) {
        const Subproblem* node = graph.find(a.id);
        if (!first) answered << "\n";
        first = false;
        answered << a.id << ": " << (node != nullptr ? node->text : std::string{"?"}) << "\n";
        answered << "    answer: " << a.answer;
    }
    auto do_call = [&](const std::vector<ChatTurn>& extra) {
        return call(TemplateName::augment, std::to_string(round),
                    {{"question", query}, {"resolved", answered.str()}, {"memory", mem.summary}},
                    extra);
    };
    auto validate = [](const json& j) {
        if (!j.contains("augment") || !j["augment"].is_boolean()) {
            throw std::runtime_error("missing \"augment\" boolean");
        }
        if (j["augment"].get<bool>()) {
            if (!j.contains("subproblem") || !j["subproblem"].is_string() ||
                trim(j["subproblem"].get<std::string>()).empty()) {
                throw std::runtime_error(
                    "augment=true needs a non-empty \"subproblem\" string");
            }
            if (!j.contains("parents") || !j["parents"].is_array()) {
                throw std::runtime_error("augment=true needs a \"parents\" array");
            }
            for (const auto& p : j["parents"]) {
                if (!p.is_string()) throw std::runtime_error("every parent must be a string id");
            }
        }
    };
    json parsed = strict_json_call(do_call, validate, [](const std::string& why,
                                                         const std::string& content) {
        throw AugmentParseError("augment reply rejected after one repair attempt: " + why +
                                "; reply was: " + content);
    });
    if (!parsed["augment"].get<bool>()) return std::nullopt;
    AugmentSuggestion suggestion;
    suggestion.subproblem = parsed["subproblem"].get<std::string>();
    suggestion.parents = parsed["parents"].get<std::vector<std::string>>();
    return suggestion;
}

FinalAnswer Engine::compose(const std::string& query, const std::vector<SubAnswer>& resolved,
                            const MemoryState& mem) {
    if (resolved.empty() && trim(mem.summary).empty()) {
        throw NoEvidence("nothing to compose from: no sub-answers and empty memory");
    }
    std::ostringstream answers;
    for (std::size_t i = 0; i < resolved.size(); ++i) {
        if (i > 0) answers << "\n";
        answers << resolved[i].id << ": " << resolved[i].answer;
    }
    auto response = call(TemplateName::compose, "",
                         {{"question", query},
                          {"sub_answers", answers.str()},
                          {"memory", mem.summary}});
    return {trim(response.content), resolved};
}

bool Engine::ask_proceed(const std::vector<Subproblem>& group, const MemoryState& mem,
                         std::size_t round) {
    auto do_call = [&](const std::vector<ChatTurn>& extra) {
        return call(TemplateName::proceed, std::to_string(round),
                    {{"subproblems", format_group(group)}, {"memory", mem.summary}}, extra);
    };
    auto validate = [](const json& j) {
        if (!j.contains("proceed") || !j["proceed"].is_boolean()) {
            throw std::runtime_error("missing \"proceed\" boolean");
        }
    };
    json parsed = strict_json_call(do_call, validate, [](const std::string& why,
                                                         const std::string& content) {
        throw ProceedParseError("proceed reply rejected after one repair attempt: " + why +
                                "; reply was: " + content);
    });
    return parsed["proceed"].get<bool>();
}

void Engine::note(const std::string& text) {
    if (run_.active) run_.trace.notes.push_back(text);
}

void Engine::snapshot(const std::string& label, const DependencyGraph& graph,
                      const ExecutionPlan& plan) {
    if (!run_.active) return;
    GraphSnapshot snap;
    snap.label = label;
    snap.nodes = graph.nodes;
    snap.ranks.reserve(graph.nodes.size());
    for (const auto& node : graph.nodes) snap.ranks.push_back(plan.rank_of.at(node.id));
    snap.edges = graph.edges;
    run_.trace.graphs.push_back(std::move(snap));
}

FinalAnswer Engine::run_pipeline(const std::string& query) {
    MemoryState memory;
    std::vector<SubAnswer> answers;

    try {
        current_stage_ = "decompose";
        Decomposition dec = decompose(query);

        current_stage_ = "plan";
        DependencyGraph graph = build_graph(dec.subproblems, dec.edges);
        check_acyclic(graph);
        ExecutionPlan plan = build_plan(graph);
        snapshot("initial", graph, plan);

        // Work units: one per rank group, or one per node when graph
        // pruning is off. Augmentations append units at the tail.
        struct Unit {
            std::size_t rank;
            std::vector<std::string> ids;
        };
        std::vector<Unit> queue;
        for (std::size_t r = 0; r < plan.rank_groups.size(); ++r) {
            if (config_.graph_pruning) {
                queue.push_back({r, plan.rank_groups[r]});
            } else {
                for (const auto& id : plan.rank_groups[r]) queue.push_back({r, {id}});
            }
        }

        std::size_t qi = 0;
        std::size_t round = 0;
        std::size_t augmentations_done = 0;
        while (qi < queue.size()) {
            if (round >= config_.max_rounds) {
                note("max rounds (" + std::to_string(config_.max_rounds) +
                     ") reached before completing the plan");
                break;
            }
            ++round;
            const Unit unit = queue[qi];
            std::vector<Subproblem> group;
            for (const auto& id : unit.ids) group.push_back(*graph.find(id));

            run_.trace.rounds.push_back({});
            {
                auto& rec = run_.trace.rounds.back();
                rec.round = round;
                rec.rank = unit.rank;
                rec.group = unit.ids;
                rec.memory_before = memory.summary;
                run_.sink = &rec.calls;
            }

            current_stage_ = "merge";
            const std::string merged = merge_rank(group, answers, unit.rank);
            run_.trace.rounds.back().merged_query = merged;

            current_stage_ = "retrieve";
            const auto retrieved = retrieval_(index_, merged, config_.top_k);
            for (const auto& sp : retrieved) {
                run_.trace.rounds.back().retrieved.push_back({sp.passage.id, sp.score});
            }

            current_stage_ = "summarize";
            memory = summarize_memory(memory, retrieved, query, unit.rank);
            run_.trace.rounds.back().memory_after = memory.summary;

            current_stage_ = "resolve";
            const auto resolved_now = resolve_rank(group, memory, query, unit.rank, round);
            run_.trace.rounds.back().sub_answers = resolved_now;
            upsert_answers(answers, resolved_now);
            run_.sink = nullptr;

            current_stage_ = "augment";
            if (augmentations_done >= config_.max_augmentations) {
                // A configured-off feature (cap 0) is not worth a note.
                if (config_.max_augmentations > 0 &&
                    !run_.trace.has_note("augmentation capped")) {
                    note("augmentation capped at " + std::to_string(config_.max_augmentations));
                }
                run_.trace.augmentations.push_back(
                    {round, false, "", {}, "augmentation capped", {}});
            } else if (graph.nodes.size() >= config_.max_graph_nodes) {
                if (!run_.trace.has_note("graph node cap")) {
                    note("graph node cap (" + std::to_string(config_.max_graph_nodes) +
                         ") reached; no further augmentation");
                }
                run_.trace.augmentations.push_back(
                    {round, false, "", {}, "graph node cap reached", {}});
            } else {
                run_.trace.augmentations.push_back({});
                auto& ev = run_.trace.augmentations.back();
                ev.round = round;
                run_.sink = &ev.calls;
                auto suggestion =
                    maybe_augment(query, graph, answers, memory, round, augmentations_done);
                run_.sink = nullptr;
                if (!suggestion) {
                    ev.accepted = false;
                    ev.reason = "model declined";
                } else {
                    std::string bad_parent;
                    for (const auto& p : suggestion->parents) {
                        if (!graph.has_node(p) || find_answer(answers, p) == nullptr) {
                            bad_parent = p;
                            break;
                        }
                    }
                    if (!bad_parent.empty()) {
                        ev.accepted = false;
                        ev.subproblem = suggestion->subproblem;
                        ev.parents = suggestion->parents;
                        ev.reason = "unknown or unresolved parent \"" + bad_parent + "\"";
                        note("augmentation rejected: " + ev.reason);
                    } else {
                        std::tie(graph, plan) =
                            augment_graph(graph, plan, suggestion->subproblem,
                                          suggestion->parents);
                        ++augmentations_done;
                        const std::string& new_id = graph.nodes.back().id;
                        queue.push_back({plan.rank_groups.size() - 1, {new_id}});
                        ev.accepted = true;
                        ev.subproblem = graph.nodes.back().text;
                        ev.parents = suggestion->parents;
                        snapshot("augmentation " + std::to_string(augmentations_done), graph,
                                 plan);
                    }
                }
            }

            if (config_.strategy == Strategy::with_replacement) {
                current_stage_ = "proceed";
                run_.sink = &run_.trace.rounds.back().calls;
                const bool advance = ask_proceed(group, memory, round);
                run_.sink = nullptr;
                if (advance) ++qi;
            } else {
                ++qi;
            }
        }
    } catch (const BudgetExceeded&) {
        run_.sink = nullptr;
        note("token budget exhausted; composing a best-effort answer from evidence gathered "
             "so far");
    }

    current_stage_ = "compose";
    run_.sink = nullptr;
    run_.budget_exempt = true;
    FinalAnswer final = compose(query, answers, memory);
    run_.budget_exempt = false;
    return final;
}

std::pair<FinalAnswer, RunTrace> Engine::run_query(const std::string& query) {
    run_ = RunState{};
    run_.active = true;
    run_.trace.query = query;
    run_.trace.config = config_;
    current_stage_ = "decompose";
    const auto start = Clock::now();
    auto wall = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start)
            .count();
    };

    try {
        FinalAnswer final = run_pipeline(query);
        run_.trace.final_answer = final.text;
        run_.trace.final_sub_answers = final.sub_answers;
        run_.trace.total_usage = run_.used;
        run_.trace.wall_ms = wall();
        run_.active = false;
        return {std::move(final), run_.trace};
    } catch (Error& e) {
        if (e.stage.empty()) e.stage = current_stage_;
        run_.trace.error = TraceError{e.stage, error_type_name(e), e.what()};
        run_.trace.total_usage = run_.used;
        run_.trace.wall_ms = wall();
        run_.active = false;
        throw;
    }
}

}  // namespace dagrag
