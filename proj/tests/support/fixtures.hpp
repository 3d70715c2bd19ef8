#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dagrag/config.hpp"
#include "dagrag/engine.hpp"
#include "dagrag/llm.hpp"
#include "dagrag/retriever.hpp"

namespace testsupport {

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// Assembles scripted-provider fixture maps, one entry per "template:key".
class FixtureBuilder {
  public:
    FixtureBuilder& raw(const std::string& key, std::string content, long long prompt = 7,
                        long long completion = 5);
    FixtureBuilder& decompose(const std::vector<std::string>& subproblems, const EdgeList& edges,
                              long long prompt = 7, long long completion = 5);
    FixtureBuilder& merge(std::size_t rank, const std::string& query);
    FixtureBuilder& summarize(std::size_t rank, const std::string& memory);
    FixtureBuilder& resolve(std::size_t rank,
                            const std::vector<std::pair<std::string, std::string>>& answers);
    FixtureBuilder& augment_decline(std::size_t round);
    FixtureBuilder& augment_suggest(std::size_t round, const std::string& subproblem,
                                    const std::vector<std::string>& parents);
    FixtureBuilder& proceed(std::size_t round, bool value);
    FixtureBuilder& compose(const std::string& answer);
    FixtureBuilder& judge(const std::string& question, const std::string& verdict);

    const std::map<std::string, dagrag::ScriptedReply>& entries() const { return entries_; }
    dagrag::ScriptedProvider provider() const;
    std::string to_json() const;
    void write(const std::string& path) const;

    // Every fixture a default-config run over this graph can ask for:
    // decompose, per-rank merge/summarize/resolve, compose, and proceed=yes
    // for rounds 1..16. Ranks come from the library's own planner, which is
    // fine for plumbing (the plan itself is oracle-checked elsewhere).
    static FixtureBuilder for_plan(const std::vector<std::string>& texts, const EdgeList& edges);

  private:
    std::map<std::string, dagrag::ScriptedReply> entries_;
};

// Replies come from per-key queues and are consumed one call at a time, so
// retry paths can see different content per attempt. Records every call.
class SequenceProvider : public dagrag::Provider {
  public:
    void push(const std::string& key, std::string content, long long prompt = 7,
              long long completion = 5);

    dagrag::ProviderResponse complete(const std::vector<dagrag::ChatTurn>& turns,
                                      const dagrag::CompletionParams& params) override;

    struct Call {
        std::string key;
        std::vector<dagrag::ChatTurn> turns;
    };
    std::vector<Call> calls;

  private:
    std::map<std::string, std::deque<dagrag::ScriptedReply>> queues_;
};

// Pass-through wrapper that counts calls per template name.
class CountingProvider : public dagrag::Provider {
  public:
    explicit CountingProvider(dagrag::Provider& inner) : inner_(inner) {}

    dagrag::ProviderResponse complete(const std::vector<dagrag::ChatTurn>& turns,
                                      const dagrag::CompletionParams& params) override;

    std::size_t count(const std::string& template_name) const;
    std::vector<std::string> keys;  // "template:key" in call order

  private:
    dagrag::Provider& inner_;
    std::map<std::string, std::size_t> counts_;
};

// BM25 retrieval that also bumps a counter on every invocation.
dagrag::RetrievalFn counting_retrieval(std::size_t& counter);

// Self-deleting directory under the system temp root.
class TempDir {
  public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

  private:
    std::string path_;
};

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::string test_data_dir();  // compiled-in absolute path to tests/data

// Minimal run-config JSON for a scripted provider.
std::string scripted_config(const std::string& fixtures_path,
                            std::size_t max_augmentations = 0,
                            const std::string& strategy = "without_replacement",
                            std::size_t max_rounds = 8, long long token_budget = 20000);

// Five-passage corpus the engine tests retrieve from.
dagrag::CorpusIndex toy_index();

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

// Runs the real CLI binary with the given arguments.
CliResult run_cli(const std::vector<std::string>& args);

}  // namespace testsupport
