#include "support/fixtures.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <sys/wait.h>

#include <json.hpp>

#include "dagrag/dag.hpp"
#include "dagrag/errors.hpp"

namespace testsupport {

namespace {

using nlohmann::json;

std::string shell_quote(const std::string& arg) {
    std::string quoted = "'";
    for (char c : arg) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted += c;
        }
    }
    quoted += "'";
    return quoted;
}

}  // namespace

FixtureBuilder& FixtureBuilder::raw(const std::string& key, std::string content,
                                    long long prompt, long long completion) {
    entries_[key] = {std::move(content), prompt, completion};
    return *this;
}

FixtureBuilder& FixtureBuilder::decompose(const std::vector<std::string>& subproblems,
                                          const EdgeList& edges, long long prompt,
                                          long long completion) {
    json reply{{"subproblems", subproblems}, {"edges", json::array()}};
    for (const auto& [from, to] : edges) reply["edges"].push_back({from, to});
    return raw("decompose:", reply.dump(), prompt, completion);
}

FixtureBuilder& FixtureBuilder::merge(std::size_t rank, const std::string& query) {
    return raw("merge:" + std::to_string(rank), json{{"query", query}}.dump());
}

FixtureBuilder& FixtureBuilder::summarize(std::size_t rank, const std::string& memory) {
    return raw("summarize:" + std::to_string(rank), memory);
}

FixtureBuilder& FixtureBuilder::resolve(
    std::size_t rank, const std::vector<std::pair<std::string, std::string>>& answers) {
    json reply{{"answers", json::array()}};
    for (const auto& [id, answer] : answers) {
        reply["answers"].push_back({{"id", id}, {"answer", answer}});
    }
    return raw("resolve:" + std::to_string(rank), reply.dump());
}

FixtureBuilder& FixtureBuilder::augment_decline(std::size_t round) {
    return raw("augment:" + std::to_string(round),
               json{{"augment", false}, {"subproblem", nullptr}, {"parents", json::array()}}
                   .dump());
}

FixtureBuilder& FixtureBuilder::augment_suggest(std::size_t round, const std::string& subproblem,
                                                const std::vector<std::string>& parents) {
    return raw("augment:" + std::to_string(round),
               json{{"augment", true}, {"subproblem", subproblem}, {"parents", parents}}.dump());
}

FixtureBuilder& FixtureBuilder::proceed(std::size_t round, bool value) {
    return raw("proceed:" + std::to_string(round), json{{"proceed", value}}.dump());
}

FixtureBuilder& FixtureBuilder::compose(const std::string& answer) {
    return raw("compose:", answer);
}

FixtureBuilder& FixtureBuilder::judge(const std::string& question, const std::string& verdict) {
    return raw("judge:" + question, verdict, 3, 1);
}

dagrag::ScriptedProvider FixtureBuilder::provider() const {
    return dagrag::ScriptedProvider(entries_);
}

std::string FixtureBuilder::to_json() const {
    json doc = json::object();
    for (const auto& [key, reply] : entries_) {
        doc[key] = {{"content", reply.content},
                    {"prompt_tokens", reply.prompt_tokens},
                    {"completion_tokens", reply.completion_tokens}};
    }
    return doc.dump(2) + "\n";
}

void FixtureBuilder::write(const std::string& path) const { write_file(path, to_json()); }

FixtureBuilder FixtureBuilder::for_plan(const std::vector<std::string>& texts,
                                        const EdgeList& edges) {
    FixtureBuilder fb;
    fb.decompose(texts, edges);

    auto graph = dagrag::build_graph(texts, edges);
    dagrag::check_acyclic(graph);
    auto plan = dagrag::build_plan(graph);
    for (std::size_t r = 0; r < plan.rank_groups.size(); ++r) {
        const auto& group = plan.rank_groups[r];
        if (group.size() > 1) {
            std::string unified = "rank " + std::to_string(r) + " facts:";
            for (const auto& id : group) unified += " " + id;
            fb.merge(r, unified);
        }
        fb.summarize(r, "memory after rank " + std::to_string(r));
        std::vector<std::pair<std::string, std::string>> answers;
        for (const auto& id : group) answers.emplace_back(id, "answer for " + id);
        fb.resolve(r, answers);
    }
    fb.compose("composed final answer");
    for (std::size_t round = 1; round <= 16; ++round) fb.proceed(round, true);
    return fb;
}

void SequenceProvider::push(const std::string& key, std::string content, long long prompt,
                            long long completion) {
    queues_[key].push_back({std::move(content), prompt, completion});
}

dagrag::ProviderResponse SequenceProvider::complete(const std::vector<dagrag::ChatTurn>& turns,
                                                    const dagrag::CompletionParams& params) {
    const std::string key = params.template_name + ":" + params.fixture_key;
    calls.push_back({key, turns});
    auto it = queues_.find(key);
    if (it == queues_.end() || it->second.empty()) {
        throw dagrag::FixtureMiss("sequence exhausted for \"" + key + "\"",
                                  params.template_name, params.fixture_key);
    }
    dagrag::ScriptedReply reply = it->second.front();
    it->second.pop_front();
    dagrag::ProviderResponse response;
    response.content = reply.content;
    response.usage = {reply.prompt_tokens, reply.completion_tokens,
                      reply.prompt_tokens + reply.completion_tokens};
    return response;
}

dagrag::ProviderResponse CountingProvider::complete(const std::vector<dagrag::ChatTurn>& turns,
                                                    const dagrag::CompletionParams& params) {
    ++counts_[params.template_name];
    keys.push_back(params.template_name + ":" + params.fixture_key);
    return inner_.complete(turns, params);
}

std::size_t CountingProvider::count(const std::string& template_name) const {
    auto it = counts_.find(template_name);
    return it == counts_.end() ? 0 : it->second;
}

dagrag::RetrievalFn counting_retrieval(std::size_t& counter) {
    return [&counter](const dagrag::CorpusIndex& index, const std::string& query,
                      std::size_t k) {
        ++counter;
        return dagrag::retrieve(index, query, k);
    };
}

TempDir::TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "dagragtestXXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr) {
        throw std::runtime_error("mkdtemp failed for " + tmpl);
    }
    path_ = buf.data();
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string test_data_dir() { return DAGRAG_TEST_DATA_DIR; }

std::string scripted_config(const std::string& fixtures_path, std::size_t max_augmentations,
                            const std::string& strategy, std::size_t max_rounds,
                            long long token_budget) {
    json cfg{{"engine",
              {{"max_augmentations", max_augmentations},
               {"strategy", strategy},
               {"max_rounds", max_rounds},
               {"token_budget", token_budget}}},
             {"provider", {{"kind", "scripted"}, {"fixtures", fixtures_path}}}};
    return cfg.dump(2) + "\n";
}

dagrag::CorpusIndex toy_index() {
    std::vector<dagrag::PassageChunk> chunks{
        {"t1", "Amber", "the amber stone glows near the old harbor wall", 0},
        {"t2", "Basalt", "basalt columns rise over the fjord in even ranks", 0},
        {"t3", "Cedar", "cedar groves shade the meadow past the granite ridge", 0},
        {"t4", "Delta", "the river delta spreads silt across the tundra plain", 0},
        {"t5", "Ember", "an ember of quartz light flickers in the lantern room", 0},
    };
    return dagrag::build_index(std::move(chunks));
}

CliResult run_cli(const std::vector<std::string>& args) {
    TempDir io;
    std::string command = shell_quote(DAGRAG_CLI_PATH);
    for (const auto& arg : args) command += " " + shell_quote(arg);
    command += " >" + shell_quote(io.file("out")) + " 2>" + shell_quote(io.file("err"));

    CliResult result;
    const int status = std::system(command.c_str());
    if (status == -1) throw std::runtime_error("failed to launch: " + command);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = read_file(io.file("out"));
    result.err = read_file(io.file("err"));
    return result;
}

}  // namespace testsupport
