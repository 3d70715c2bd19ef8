#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dagrag/config.hpp"
#include "dagrag/engine.hpp"
#include "dagrag/errors.hpp"
#include "dagrag/eval.hpp"
#include "dagrag/retriever.hpp"
#include "dagrag/trace.hpp"

namespace {

// Exit codes, stable per error class: 1 parse/engine errors, 2 I/O
// failures, 3 provider authentication failures.
constexpr int kExitError = 1;
constexpr int kExitIo = 2;
constexpr int kExitAuth = 3;

struct IngestArgs {
    std::string corpus;
    std::string index;
    bool dense = false;
    std::string backend;
    std::string model;
};

struct AskArgs {
    std::string index;
    std::string question;
    std::string config;
    std::string trace_out;
    bool no_graph_pruning = false;
    bool no_context_pruning = false;
};

struct EvalArgs {
    std::string index;
    std::string dataset;
    std::string config;
    std::string out;
    std::size_t concurrency = 1;
    std::string jaccard_csv;
};

struct TraceArgs {
    std::string file;
};

std::string line_prefix(long long line) {
    return line >= 0 ? "line " + std::to_string(line) + ": " : "";
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dagrag::IoError("cannot open output file for writing: " + path);
    out << content;
    if (!out) throw dagrag::IoError("failed writing output file: " + path);
}

std::string seconds_str(long long wall_ms) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", static_cast<double>(wall_ms) / 1000.0);
    return buf;
}

// Dense mode swaps BM25 for cosine retrieval against the embedding backend;
// the client is owned by the returned closure.
dagrag::RetrievalFn make_retrieval(const dagrag::RetrieverConfig& rc) {
    if (!rc.dense) return {};
    auto client = std::make_shared<dagrag::HttpEmbeddingClient>(rc.backend_url, rc.embed_model);
    return [client](const dagrag::CorpusIndex& index, const std::string& query, std::size_t k) {
        return dagrag::embed_retrieve(index, query, k, *client);
    };
}

int run_ingest(const IngestArgs& args) {
    try {
        dagrag::CorpusIndex index = dagrag::ingest_corpus_file(args.corpus);
        if (args.dense) {
            dagrag::HttpEmbeddingClient client(args.backend, args.model);
            dagrag::embed_corpus(index, client);
        }
        dagrag::save_index(index, args.index);
        std::cout << "ingested " << index.doc_count() << " passages\n";
        return 0;
    } catch (const dagrag::MalformedRecord& e) {
        std::cerr << "error: " << line_prefix(e.line) << e.what() << "\n";
        return kExitError;
    } catch (const dagrag::DuplicateId& e) {
        std::cerr << "error: " << line_prefix(e.line) << e.what() << "\n";
        return kExitError;
    } catch (const dagrag::EmptyPassage& e) {
        std::cerr << "error: " << line_prefix(e.line) << e.what() << "\n";
        return kExitError;
    } catch (const dagrag::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
}

int run_ask(const AskArgs& args) {
    try {
        dagrag::RunConfig config = dagrag::load_run_config(args.config);
        if (args.no_graph_pruning) config.engine.graph_pruning = false;
        if (args.no_context_pruning) config.engine.context_pruning = false;

        dagrag::CorpusIndex index = dagrag::load_index(args.index);
        auto provider = dagrag::make_provider(config.provider);
        dagrag::Engine engine(config.engine, index, *provider);
        engine.set_completion_defaults(config.provider.temperature, config.provider.seed,
                                       config.provider.max_tokens);
        if (auto retrieval = make_retrieval(config.retriever)) {
            engine.set_retrieval_fn(retrieval);
        }

        try {
            auto [final, trace] = engine.run_query(args.question);
            if (!args.trace_out.empty()) dagrag::write_trace_file(trace, args.trace_out);
            std::cout << final.text << "\n";
            std::cout << "tokens=" << trace.total_usage.total_tokens
                      << " seconds=" << seconds_str(trace.wall_ms)
                      << " rounds=" << trace.round_count() << "\n";
            return 0;
        } catch (const dagrag::Error&) {
            // The partial trace is still worth keeping for debugging.
            if (!args.trace_out.empty()) {
                try {
                    dagrag::write_trace_file(engine.last_trace(), args.trace_out);
                } catch (const dagrag::Error& io) {
                    std::cerr << "error: " << io.what() << "\n";
                }
            }
            throw;
        }
    } catch (const dagrag::ProviderAuthError& e) {
        std::cerr << "error: provider authentication failed: " << e.what() << "\n";
        return kExitAuth;
    } catch (const dagrag::Error& e) {
        if (!e.stage.empty()) {
            std::cerr << "error at stage \"" << e.stage << "\": " << e.what() << "\n";
        } else {
            std::cerr << "error: " << e.what() << "\n";
        }
        return kExitError;
    }
}

void print_progress(std::size_t done, std::size_t total, const dagrag::ExampleRecord& rec) {
    std::cout << "[" << done << "/" << total << "] " << rec.id
              << (rec.failed ? " failed (" + rec.error_stage + ")" : "") << "\n";
}

int run_eval_cmd(const EvalArgs& args, bool compare) {
    try {
        dagrag::RunConfig config = dagrag::load_run_config(args.config);
        dagrag::CorpusIndex index = dagrag::load_index(args.index);
        std::vector<dagrag::EvalExample> dataset = dagrag::load_dataset_file(args.dataset);
        auto provider = dagrag::make_provider(config.provider);
        auto judge = dagrag::make_provider(config.judge);
        auto retrieval = make_retrieval(config.retriever);

        if (compare) {
            dagrag::StrategyComparison cmp =
                dagrag::compare_strategies(dataset, config, index, *provider, *judge,
                                           args.concurrency, retrieval, print_progress);
            write_text_file(args.out, cmp.to_json());
            if (!args.jaccard_csv.empty()) {
                write_text_file(args.jaccard_csv + ".without_replacement.csv",
                                cmp.without_matrix.to_csv());
                write_text_file(args.jaccard_csv + ".with_replacement.csv",
                                cmp.with_matrix.to_csv());
            }
            std::cout << "\n" << cmp.to_table();
        } else {
            dagrag::EvalOutcome outcome = dagrag::run_eval(
                dataset, config, index, *provider, *judge, args.concurrency, retrieval,
                print_progress);
            write_text_file(args.out, outcome.report.to_json());
            if (!args.jaccard_csv.empty()) {
                write_text_file(args.jaccard_csv,
                                dagrag::subquery_similarity_matrix(outcome.traces).to_csv());
            }
            std::cout << "\n" << outcome.report.to_table();
        }
        return 0;
    } catch (const dagrag::ProviderAuthError& e) {
        std::cerr << "error: provider authentication failed: " << e.what() << "\n";
        return kExitAuth;
    } catch (const dagrag::DatasetParseError& e) {
        std::cerr << "error: dataset: " << line_prefix(e.line) << e.what() << "\n";
        return kExitError;
    } catch (const dagrag::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const dagrag::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

std::string clip(const std::string& text, std::size_t width) {
    if (text.size() <= width) return text;
    return text.substr(0, width - 3) + "...";
}

int run_trace(const TraceArgs& args) {
    try {
        dagrag::RunTrace trace = dagrag::read_trace_file(args.file);
        std::cout << "query: " << trace.query << "\n";
        std::cout << "strategy=" << to_string(trace.config.strategy)
                  << " top_k=" << trace.config.top_k
                  << " graph_pruning=" << (trace.config.graph_pruning ? "on" : "off")
                  << " context_pruning=" << (trace.config.context_pruning ? "on" : "off") << "\n\n";

        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-5s %-4s %-44s %-24s %8s\n", "round", "rank",
                      "merged query", "retrieved", "tokens");
        std::cout << buf;
        for (const auto& round : trace.rounds) {
            std::string ids;
            for (const auto& ref : round.retrieved) {
                if (!ids.empty()) ids += ",";
                ids += ref.id;
            }
            long long tokens = 0;
            for (const auto& call : round.calls) tokens += call.usage.total_tokens;
            std::snprintf(buf, sizeof(buf), "%-5zu %-4zu %-44s %-24s %8lld\n", round.round,
                          round.rank, clip(round.merged_query, 44).c_str(),
                          clip(ids, 24).c_str(), tokens);
            std::cout << buf;
        }

        for (const auto& ev : trace.augmentations) {
            if (!ev.accepted) continue;
            std::cout << "augmented after round " << ev.round << ": "
                      << clip(ev.subproblem, 60) << "\n";
        }
        for (const auto& note : trace.notes) std::cout << "note: " << note << "\n";
        if (trace.error.has_value()) {
            std::cout << "error: stage=" << trace.error->stage
                      << " type=" << trace.error->error_type << " message=" << trace.error->message
                      << "\n";
        }
        std::cout << "\nfinal answer: " << trace.final_answer << "\n";
        std::cout << "tokens=" << trace.total_usage.total_tokens
                  << " seconds=" << seconds_str(trace.wall_ms) << " rounds=" << trace.round_count()
                  << "\n";
        return 0;
    } catch (const dagrag::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-hop question answering over a local corpus via DAG-scheduled retrieval"};
    app.require_subcommand(1);

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "Build a passage index from a JSONL corpus");
    ingest->add_option("--corpus", ingest_args.corpus, "Corpus JSONL file")->required();
    ingest->add_option("--index", ingest_args.index, "Index output directory")->required();
    auto* dense_flag = ingest->add_flag("--dense", ingest_args.dense,
                                        "Also store embeddings from the backend");
    ingest->add_option("--backend", ingest_args.backend, "Embedding backend URL")
        ->needs(dense_flag);
    ingest->add_option("--model", ingest_args.model, "Embedding model id")->needs(dense_flag);

    AskArgs ask_args;
    auto* ask = app.add_subcommand("ask", "Answer one question");
    ask->add_option("--index", ask_args.index, "Index directory")->required();
    ask->add_option("--question", ask_args.question, "Question text")->required();
    ask->add_option("--config", ask_args.config, "Run config JSON file")->required();
    ask->add_option("--trace", ask_args.trace_out, "Write the run trace JSONL here");
    ask->add_flag("--no-graph-pruning", ask_args.no_graph_pruning,
                  "One retrieval round per subproblem instead of per rank");
    ask->add_flag("--no-context-pruning", ask_args.no_context_pruning,
                  "Append raw passages to memory instead of summarizing");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a JSONL dataset");
    eval->add_option("--index", eval_args.index, "Index directory")->required();
    eval->add_option("--dataset", eval_args.dataset, "Dataset JSONL file")->required();
    eval->add_option("--config", eval_args.config, "Run config JSON file")->required();
    eval->add_option("--out", eval_args.out, "Report JSON output path")->required();
    eval->add_option("--concurrency", eval_args.concurrency, "Examples in flight")
        ->check(CLI::PositiveNumber);
    eval->add_option("--jaccard-csv", eval_args.jaccard_csv,
                     "Write the round-similarity matrix CSV here");

    EvalArgs cmp_args;
    auto* cmp = app.add_subcommand("compare-strategies",
                                   "Evaluate under both sampling strategies");
    cmp->add_option("--index", cmp_args.index, "Index directory")->required();
    cmp->add_option("--dataset", cmp_args.dataset, "Dataset JSONL file")->required();
    cmp->add_option("--config", cmp_args.config, "Run config JSON file")->required();
    cmp->add_option("--out", cmp_args.out, "Comparison JSON output path")->required();
    cmp->add_option("--concurrency", cmp_args.concurrency, "Examples in flight")
        ->check(CLI::PositiveNumber);
    cmp->add_option("--jaccard-csv", cmp_args.jaccard_csv,
                    "Prefix for the two similarity matrix CSVs");

    TraceArgs trace_args;
    auto* trace = app.add_subcommand("trace", "Pretty-print a run trace JSONL");
    trace->add_option("file", trace_args.file, "Trace JSONL file")->required();

    CLI11_PARSE(app, argc, argv);

    if (ingest->parsed()) return run_ingest(ingest_args);
    if (ask->parsed()) return run_ask(ask_args);
    if (eval->parsed()) return run_eval_cmd(eval_args, false);
    if (cmp->parsed()) return run_eval_cmd(cmp_args, true);
    if (trace->parsed()) return run_trace(trace_args);
    return kExitError;
}
