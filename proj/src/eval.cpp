#include "dagrag/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dagrag/errors.hpp"
#include "dagrag/prompts.hpp"
#include "dagrag/text.hpp"

namespace dagrag {

namespace {

using nlohmann::json;

std::vector<std::string> words_of(const std::string& text) { return normalize(text); }

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::string lower_trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(begin, end - begin + 1);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

json usage_json(const TokenUsage& u) {
    return {{"prompt_tokens", u.prompt_tokens},
            {"completion_tokens", u.completion_tokens},
            {"total_tokens", u.total_tokens}};
}

json record_json(const ExampleRecord& r) {
    json j{{"id", r.id},
           {"type", r.type},
           {"generated", r.generated},
           {"string_correct", r.string_correct},
           {"llm_correct", r.llm_correct},
           {"judge_flagged", r.judge_flagged},
           {"usage", usage_json(r.usage)},
           {"judge_usage", usage_json(r.judge_usage)},
           {"wall_ms", r.wall_ms},
           {"rounds", r.rounds},
           {"failed", r.failed}};
    if (r.failed) {
        j["error_stage"] = r.error_stage;
        j["error_message"] = r.error_message;
    }
    return j;
}

json aggregates_json(const Aggregates& a) {
    json by_type = json::object();
    for (const auto& [label, t] : a.by_type) {
        by_type[label.empty() ? "untyped" : label] = {{"count", t.count},
                                                      {"string_accuracy", t.string_accuracy},
                                                      {"llm_accuracy", t.llm_accuracy}};
    }
    return {{"examples", a.examples},
            {"failures", a.failures},
            {"string_accuracy", a.string_accuracy},
            {"llm_accuracy", a.llm_accuracy},
            {"avg_tokens", a.avg_tokens},
            {"avg_seconds", a.avg_seconds},
            {"avg_rounds", a.avg_rounds},
            {"by_type", by_type}};
}

json report_json(const MetricsReport& report) {
    json records = json::array();
    for (const auto& r : report.records) records.push_back(record_json(r));
    return {{"format_version", 1},
            {"aggregates", aggregates_json(report.aggregates)},
            {"metadata",
             {{"jaccard_masking",
               "matrix entries average only over traces whose round count covers both rounds"},
              {"aggregation",
               "means run over all examples; failed examples score 0 on both accuracies and "
               "keep their partial usage"}}},
            {"records", records}};
}

json matrix_json(const JaccardMatrix& m) {
    return {{"dim", m.dim}, {"values", m.values}};
}

ExampleRecord evaluate_example(Engine& engine, Provider& judge, const EvalExample& example,
                               RunTrace& trace_out) {
    ExampleRecord rec;
    rec.id = example.id;
    rec.type = example.type;
    try {
        auto [final, trace] = engine.run_query(example.question);
        rec.generated = final.text;
        rec.usage = trace.total_usage;
        rec.wall_ms = trace.wall_ms;
        rec.rounds = trace.round_count();
        trace_out = std::move(trace);
    } catch (const Error& e) {
        const RunTrace& partial = engine.last_trace();
        rec.failed = true;
        rec.error_stage =
            partial.error.has_value() ? partial.error->stage : (e.stage.empty() ? "?" : e.stage);
        rec.error_message = e.what();
        rec.usage = partial.total_usage;
        rec.wall_ms = partial.wall_ms;
        rec.rounds = partial.round_count();
        trace_out = partial;
        return rec;
    }
    rec.string_correct = string_accuracy(example.gold, rec.generated);
    try {
        JudgeResult judged = llm_accuracy(judge, example.question, example.gold, rec.generated);
        rec.llm_correct = judged.correct;
        rec.judge_flagged = judged.flagged;
        rec.judge_usage = judged.usage;
    } catch (const Error& e) {
        rec.failed = true;
        rec.error_stage = "judge";
        rec.error_message = e.what();
        rec.string_correct = 0.0;  // failed examples score 0 on both accuracies
    }
    return rec;
}

}  // namespace

double string_accuracy(const std::string& gold, const std::string& generated) {
    const auto needle = words_of(gold);
    if (needle.empty()) throw EmptyGold("gold answer normalizes to an empty word sequence");
    const auto hay = words_of(generated);
    if (hay.size() < needle.size()) return 0.0;
    for (std::size_t start = 0; start + needle.size() <= hay.size(); ++start) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + start)) return 1.0;
    }
    return 0.0;
}

JudgeResult llm_accuracy(Provider& judge, const std::string& question, const std::string& gold,
                         const std::string& generated) {
    auto turns = render(get_template(TemplateName::judge),
                        {{"question", question}, {"gold", gold}, {"generated", generated}});
    CompletionParams params;
    params.template_name = "judge";
    params.fixture_key = question;

    JudgeResult result;
    auto ask = [&](const std::vector<ChatTurn>& extra) {
        auto with_extra = turns;
        with_extra.insert(with_extra.end(), extra.begin(), extra.end());
        ProviderResponse r = judge.complete(with_extra, params);
        result.usage += r.usage;
        return r;
    };

    ProviderResponse first = ask({});
    std::string verdict = lower_trim(first.content);
    if (verdict != "yes" && verdict != "no") {
        ProviderResponse second =
            ask({{Role::assistant, first.content},
                 {Role::user, "Reply with exactly \"yes\" or \"no\" and nothing else."}});
        verdict = lower_trim(second.content);
        if (verdict != "yes" && verdict != "no") {
            result.correct = 0.0;
            result.flagged = true;
            return result;
        }
    }
    result.correct = (verdict == "yes") ? 1.0 : 0.0;
    return result;
}

double jaccard(const std::string& a, const std::string& b) {
    const auto wa = words_of(a);
    const auto wb = words_of(b);
    std::set<std::string> sa(wa.begin(), wa.end());
    std::set<std::string> sb(wb.begin(), wb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& w : sa) inter += sb.count(w);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string JaccardMatrix::to_csv() const {
    std::ostringstream out;
    out << "round";
    for (std::size_t j = 0; j < dim; ++j) out << ",r" << (j + 1);
    out << "\n";
    for (std::size_t i = 0; i < dim; ++i) {
        out << "r" << (i + 1);
        for (std::size_t j = 0; j < dim; ++j) out << "," << fmt("%.6f", at(i, j));
        out << "\n";
    }
    return out.str();
}

JaccardMatrix subquery_similarity_matrix(const std::vector<RunTrace>& traces) {
    if (traces.empty()) throw NoTraces("no traces to build a similarity matrix from");
    JaccardMatrix m;
    for (const auto& t : traces) m.dim = std::max(m.dim, t.round_count());
    m.values.assign(m.dim * m.dim, 0.0);
    for (std::size_t i = 0; i < m.dim; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = 0.0;
            std::size_t covering = 0;
            for (const auto& t : traces) {
                if (t.round_count() <= i) continue;  // j <= i, so i is the binding round
                sum += jaccard(t.rounds[i].merged_query, t.rounds[j].merged_query);
                ++covering;
            }
            const double mean = covering > 0 ? sum / static_cast<double>(covering) : 0.0;
            m.values[i * m.dim + j] = mean;
            m.values[j * m.dim + i] = mean;
        }
    }
    return m;
}

std::vector<EvalExample> load_dataset_jsonl(std::istream& in) {
    std::vector<EvalExample> out;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DatasetParseError("invalid JSON: " + std::string(e.what()), line_no);
        }
        if (!j.is_object()) throw DatasetParseError("record is not a JSON object", line_no);
        EvalExample ex;
        if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
            throw DatasetParseError("missing non-empty \"id\"", line_no);
        }
        if (!j.contains("question") || !j["question"].is_string() ||
            j["question"].get<std::string>().empty()) {
            throw DatasetParseError("missing non-empty \"question\"", line_no);
        }
        if (!j.contains("answer") || !j["answer"].is_string() ||
            normalize(j["answer"].get<std::string>()).empty()) {
            throw DatasetParseError("missing non-empty \"answer\"", line_no);
        }
        ex.id = j["id"].get<std::string>();
        ex.question = j["question"].get<std::string>();
        ex.gold = j["answer"].get<std::string>();
        if (j.contains("type") && !j["type"].is_null()) {
            if (!j["type"].is_string()) throw DatasetParseError("\"type\" must be a string", line_no);
            ex.type = j["type"].get<std::string>();
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<EvalExample> load_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    return load_dataset_jsonl(in);
}

Aggregates recompute_aggregates(const std::vector<ExampleRecord>& records) {
    Aggregates a;
    a.examples = records.size();
    if (records.empty()) return a;

    double str_sum = 0.0, llm_sum = 0.0, tok_sum = 0.0, ms_sum = 0.0, round_sum = 0.0;
    std::map<std::string, std::array<double, 3>> type_sums;  // count, string, llm
    for (const auto& r : records) {
        if (r.failed) ++a.failures;
        str_sum += r.string_correct;
        llm_sum += r.llm_correct;
        tok_sum += static_cast<double>(r.usage.total_tokens);
        ms_sum += static_cast<double>(r.wall_ms);
        round_sum += static_cast<double>(r.rounds);
        auto& t = type_sums[r.type];
        t[0] += 1.0;
        t[1] += r.string_correct;
        t[2] += r.llm_correct;
    }
    const auto n = static_cast<double>(records.size());
    a.string_accuracy = str_sum / n;
    a.llm_accuracy = llm_sum / n;
    a.avg_tokens = tok_sum / n;
    a.avg_seconds = ms_sum / n / 1000.0;
    a.avg_rounds = round_sum / n;
    for (const auto& [label, sums] : type_sums) {
        a.by_type[label] = {static_cast<std::size_t>(sums[0]), sums[1] / sums[0],
                            sums[2] / sums[0]};
    }
    return a;
}

std::string MetricsReport::to_json() const { return report_json(*this).dump(2) + "\n"; }

std::string MetricsReport::to_table() const {
    std::ostringstream out;
    char buf[128];
    auto row = [&](const char* label, const std::string& value) {
        std::snprintf(buf, sizeof(buf), "%-18s %s\n", label, value.c_str());
        out << buf;
    };
    row("examples", std::to_string(aggregates.examples));
    row("failures", std::to_string(aggregates.failures));
    row("string accuracy", fmt("%.3f", aggregates.string_accuracy));
    row("llm accuracy", fmt("%.3f", aggregates.llm_accuracy));
    row("avg tokens", fmt("%.1f", aggregates.avg_tokens));
    row("avg seconds", fmt("%.3f", aggregates.avg_seconds));
    row("avg rounds", fmt("%.2f", aggregates.avg_rounds));
    if (!aggregates.by_type.empty()) {
        out << "\n";
        std::snprintf(buf, sizeof(buf), "%-18s %6s %8s %8s\n", "type", "n", "string", "llm");
        out << buf;
        for (const auto& [label, t] : aggregates.by_type) {
            std::snprintf(buf, sizeof(buf), "%-18s %6zu %8.3f %8.3f\n",
                          label.empty() ? "untyped" : label.c_str(), t.count, t.string_accuracy,
                          t.llm_accuracy);
            out << buf;
        }
    }
    return out.str();
}

EvalOutcome run_eval(const std::vector<EvalExample>& dataset, const RunConfig& config,
                     const CorpusIndex& index, Provider& provider, Provider& judge,
                     std::size_t concurrency, const RetrievalFn& retrieval,
                     const EvalProgressFn& progress) {
    if (concurrency == 0) throw ConfigError("concurrency must be at least 1");

    EvalOutcome out;
    out.report.records.resize(dataset.size());
    out.traces.resize(dataset.size());

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        Engine engine(config.engine, index, provider);
        engine.set_completion_defaults(config.provider.temperature, config.provider.seed,
                                       config.provider.max_tokens);
        if (retrieval) engine.set_retrieval_fn(retrieval);
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= dataset.size()) break;
            out.report.records[i] = evaluate_example(engine, judge, dataset[i], out.traces[i]);
            if (progress) {
                const std::size_t finished = done.fetch_add(1) + 1;
                std::lock_guard<std::mutex> lock(progress_mutex);
                progress(finished, dataset.size(), out.report.records[i]);
            }
        }
    };

    const std::size_t workers = std::min(concurrency, std::max<std::size_t>(dataset.size(), 1));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    out.report.aggregates = recompute_aggregates(out.report.records);
    return out;
}

std::string StrategyComparison::to_json() const {
    json j{{"format_version", 1},
           {"without_replacement",
            {{"report", report_json(without_replacement)}, {"jaccard_matrix", matrix_json(without_matrix)}}},
           {"with_replacement",
            {{"report", report_json(with_replacement)}, {"jaccard_matrix", matrix_json(with_matrix)}}}};
    return j.dump(2) + "\n";
}

std::string StrategyComparison::to_table() const {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-18s %14s %14s\n", "metric", "without", "with");
    out << buf;
    auto row = [&](const char* label, double a, double b, const char* spec) {
        std::snprintf(buf, sizeof(buf), "%-18s %14s %14s\n", label, fmt(spec, a).c_str(),
                      fmt(spec, b).c_str());
        out << buf;
    };
    const auto& wo = without_replacement.aggregates;
    const auto& wi = with_replacement.aggregates;
    row("string accuracy", wo.string_accuracy, wi.string_accuracy, "%.3f");
    row("llm accuracy", wo.llm_accuracy, wi.llm_accuracy, "%.3f");
    row("avg tokens", wo.avg_tokens, wi.avg_tokens, "%.1f");
    row("avg seconds", wo.avg_seconds, wi.avg_seconds, "%.3f");
    row("avg rounds", wo.avg_rounds, wi.avg_rounds, "%.2f");
    return out.str();
}

StrategyComparison compare_strategies(const std::vector<EvalExample>& dataset,
                                      const RunConfig& config, const CorpusIndex& index,
                                      Provider& provider, Provider& judge,
                                      std::size_t concurrency, const RetrievalFn& retrieval,
                                      const EvalProgressFn& progress) {
    StrategyComparison cmp;

    RunConfig without = config;
    without.engine.strategy = Strategy::without_replacement;
    EvalOutcome a =
        run_eval(dataset, without, index, provider, judge, concurrency, retrieval, progress);
    cmp.without_replacement = std::move(a.report);
    cmp.without_matrix = subquery_similarity_matrix(a.traces);

    RunConfig with = config;
    with.engine.strategy = Strategy::with_replacement;
    EvalOutcome b =
        run_eval(dataset, with, index, provider, judge, concurrency, retrieval, progress);
    cmp.with_replacement = std::move(b.report);
    cmp.with_matrix = subquery_similarity_matrix(b.traces);

    return cmp;
}

}  // namespace dagrag
