#include "dagrag/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

#include "dagrag/errors.hpp"
#include "url.hpp"

namespace dagrag {

namespace {

using nlohmann::json;

// Empty for retrieval purposes: nothing survives normalization, so the
// passage could never match a query.
bool blank(const std::string& s) { return token_count(s) == 0; }

PassageChunk parse_record(const std::string& line, long long line_no) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::exception& e) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (!rec.is_object()) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": record is not an object",
                              line_no);
    }
    if (!rec.contains("id") || !rec["id"].is_string() || rec["id"].get<std::string>().empty()) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": missing or empty \"id\"",
                              line_no);
    }
    if (!rec.contains("text") || !rec["text"].is_string()) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": missing \"text\"", line_no);
    }
    PassageChunk chunk;
    chunk.id = rec["id"].get<std::string>();
    chunk.text = rec["text"].get<std::string>();
    if (rec.contains("title") && rec["title"].is_string()) {
        chunk.title = rec["title"].get<std::string>();
    } else if (rec.contains("title") && !rec["title"].is_null()) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": \"title\" must be a string or null",
                              line_no);
    }
    if (blank(chunk.text)) {
        throw EmptyPassage("line " + std::to_string(line_no) + ": passage \"" + chunk.id +
                               "\" has empty text",
                           line_no);
    }
    return chunk;
}

// score descending, then passage id ascending
std::vector<std::size_t> ranked_order(const CorpusIndex& index, const std::vector<double>& score) {
    std::vector<std::size_t> order(index.passages.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return index.passages[a].id < index.passages[b].id;
    });
    return order;
}

std::vector<ScoredPassage> take_top(const CorpusIndex& index, const std::vector<double>& score,
                                    std::size_t k) {
    auto order = ranked_order(index, score);
    std::vector<ScoredPassage> out;
    out.reserve(std::min(k, order.size()));
    for (std::size_t i = 0; i < order.size() && i < k; ++i) {
        out.push_back({index.passages[order[i]], score[order[i]], i + 1});
    }
    return out;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json parsed;
    try {
        in >> parsed;
    } catch (const json::exception& e) {
        throw MalformedRecord(path.string() + ": " + e.what());
    }
    return parsed;
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << body;
    if (!out) throw IoError("failed writing " + path.string());
}

// Applies `fn` to each non-blank line with its 1-based line number.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        fn(line, line_no);
    }
}

}  // namespace

const PassageChunk* CorpusIndex::find(std::string_view id) const noexcept {
    auto it = by_id.find(std::string(id));
    return it == by_id.end() ? nullptr : &passages[it->second];
}

CorpusIndex build_index(std::vector<PassageChunk> chunks, const Bm25Params& params) {
    CorpusIndex index;
    index.params = params;
    index.passages = std::move(chunks);
    std::size_t total_tokens = 0;
    for (std::size_t i = 0; i < index.passages.size(); ++i) {
        auto& chunk = index.passages[i];
        if (chunk.id.empty()) throw MalformedRecord("passage " + std::to_string(i) + " has no id");
        if (blank(chunk.text)) throw EmptyPassage("passage \"" + chunk.id + "\" has empty text");
        if (!index.by_id.emplace(chunk.id, i).second) {
            throw DuplicateId("duplicate passage id \"" + chunk.id + "\"");
        }
        auto terms = normalize(chunk.text);
        chunk.token_count = terms.size();
        total_tokens += terms.size();
        // tf per term of this document
        std::map<std::string, std::size_t> tf;
        for (const auto& t : terms) ++tf[t];
        for (const auto& [term, count] : tf) index.term_postings[term].push_back({i, count});
    }
    index.avg_doc_length =
        index.passages.empty() ? 0.0
                               : static_cast<double>(total_tokens) / index.passages.size();
    return index;
}

CorpusIndex ingest_corpus(std::istream& in, const Bm25Params& params) {
    std::vector<PassageChunk> chunks;
    std::unordered_set<std::string> ids;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        PassageChunk chunk = parse_record(line, line_no);
        if (!ids.insert(chunk.id).second) {
            throw DuplicateId("line " + std::to_string(line_no) + ": duplicate passage id \"" +
                                  chunk.id + "\"",
                              line_no);
        }
        chunks.push_back(std::move(chunk));
    }
    return build_index(std::move(chunks), params);
}

CorpusIndex ingest_corpus_file(const std::string& path, const Bm25Params& params) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file " + path);
    return ingest_corpus(in, params);
}

std::vector<ScoredPassage> retrieve(const CorpusIndex& index, const std::string& query,
                                    std::size_t k) {
    auto terms = normalize(query);
    if (terms.empty()) throw EmptyQuery("query normalizes to no terms: \"" + query + "\"");

    const double n_docs = static_cast<double>(index.doc_count());
    std::vector<double> score(index.passages.size(), 0.0);
    for (const auto& term : terms) {
        auto it = index.term_postings.find(term);
        if (it == index.term_postings.end()) continue;
        const auto& postings = it->second;
        const double df = static_cast<double>(postings.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const auto& p : postings) {
            const double tf = static_cast<double>(p.tf);
            const double dl = static_cast<double>(index.passages[p.doc].token_count);
            const double denom =
                tf + index.params.k1 *
                         (1.0 - index.params.b + index.params.b * dl / index.avg_doc_length);
            score[p.doc] += idf * tf * (index.params.k1 + 1.0) / denom;
        }
    }
    return take_top(index, score, k);
}

void save_index(const CorpusIndex& index, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create index directory " + dir + ": " + ec.message());

    json manifest = {
        {"format_version", 1},
        {"doc_count", index.doc_count()},
        {"avg_doc_length", index.avg_doc_length},
        {"bm25", {{"k1", index.params.k1}, {"b", index.params.b}}},
        {"dense_mode", index.dense_mode},
    };
    write_text_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");

    std::ostringstream passages;
    for (const auto& chunk : index.passages) {
        passages << json{{"id", chunk.id},
                         {"title", chunk.title},
                         {"text", chunk.text},
                         {"token_count", chunk.token_count}}
                        .dump()
                 << "\n";
    }
    write_text_file(fs::path(dir) / "passages.jsonl", passages.str());

    std::ostringstream postings;
    for (const auto& [term, posts] : index.term_postings) {
        json arr = json::array();
        for (const auto& p : posts) arr.push_back({index.passages[p.doc].id, p.tf});
        postings << json{{"term", term}, {"postings", arr}}.dump() << "\n";
    }
    write_text_file(fs::path(dir) / "postings.jsonl", postings.str());

    if (index.dense_mode) {
        std::ostringstream embeddings;
        for (std::size_t i = 0; i < index.passages.size(); ++i) {
            embeddings << json{{"id", index.passages[i].id}, {"embedding", index.embeddings[i]}}
                              .dump()
                       << "\n";
        }
        write_text_file(fs::path(dir) / "embeddings.jsonl", embeddings.str());
    }
}

CorpusIndex load_index(const std::string& dir) {
    namespace fs = std::filesystem;
    json manifest = read_json_file(fs::path(dir) / "manifest.json");
    if (!manifest.contains("format_version") || manifest["format_version"] != 1) {
        throw MalformedRecord("unsupported index format_version in " + dir);
    }

    CorpusIndex index;
    index.params.k1 = manifest["bm25"]["k1"].get<double>();
    index.params.b = manifest["bm25"]["b"].get<double>();
    index.dense_mode = manifest.value("dense_mode", false);

    for_each_line(fs::path(dir) / "passages.jsonl", [&](const std::string& line, long long line_no) {
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw MalformedRecord("passages.jsonl line " + std::to_string(line_no) + ": " + e.what(),
                                  line_no);
        }
        PassageChunk chunk{rec.at("id").get<std::string>(),
                           rec.value("title", std::string{}),
                           rec.at("text").get<std::string>(),
                           rec.at("token_count").get<std::size_t>()};
        if (!index.by_id.emplace(chunk.id, index.passages.size()).second) {
            throw DuplicateId("passages.jsonl line " + std::to_string(line_no) +
                                  ": duplicate passage id \"" + chunk.id + "\"",
                              line_no);
        }
        index.passages.push_back(std::move(chunk));
    });

    if (manifest["doc_count"].get<std::size_t>() != index.doc_count()) {
        throw MalformedRecord("manifest doc_count disagrees with passages.jsonl in " + dir);
    }
    std::size_t total_tokens = 0;
    for (const auto& chunk : index.passages) total_tokens += chunk.token_count;
    index.avg_doc_length =
        index.passages.empty() ? 0.0 : static_cast<double>(total_tokens) / index.doc_count();
    if (std::abs(index.avg_doc_length - manifest["avg_doc_length"].get<double>()) > 1e-9) {
        throw MalformedRecord("manifest avg_doc_length disagrees with passages.jsonl in " + dir);
    }

    for_each_line(fs::path(dir) / "postings.jsonl", [&](const std::string& line, long long line_no) {
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw MalformedRecord("postings.jsonl line " + std::to_string(line_no) + ": " + e.what(),
                                  line_no);
        }
        std::vector<Posting> posts;
        for (const auto& entry : rec.at("postings")) {
            const auto id = entry.at(0).get<std::string>();
            auto it = index.by_id.find(id);
            if (it == index.by_id.end()) {
                throw MalformedRecord("postings.jsonl line " + std::to_string(line_no) +
                                          ": unknown passage id \"" + id + "\"",
                                      line_no);
            }
            posts.push_back({it->second, entry.at(1).get<std::size_t>()});
        }
        index.term_postings.emplace(rec.at("term").get<std::string>(), std::move(posts));
    });

    if (index.dense_mode) {
        index.embeddings.resize(index.passages.size());
        std::vector<bool> seen(index.passages.size(), false);
        for_each_line(
            fs::path(dir) / "embeddings.jsonl", [&](const std::string& line, long long line_no) {
                json rec;
                try {
                    rec = json::parse(line);
                } catch (const json::exception& e) {
                    throw MalformedRecord(
                        "embeddings.jsonl line " + std::to_string(line_no) + ": " + e.what(),
                        line_no);
                }
                const auto id = rec.at("id").get<std::string>();
                auto it = index.by_id.find(id);
                if (it == index.by_id.end()) {
                    throw MalformedRecord("embeddings.jsonl line " + std::to_string(line_no) +
                                              ": unknown passage id \"" + id + "\"",
                                          line_no);
                }
                index.embeddings[it->second] = rec.at("embedding").get<std::vector<double>>();
                seen[it->second] = true;
            });
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i]) {
                throw MalformedRecord("embeddings.jsonl is missing passage \"" +
                                      index.passages[i].id + "\"");
            }
        }
    }
    return index;
}

HttpEmbeddingClient::HttpEmbeddingClient(std::string url, std::string model, int timeout_ms)
    : url_(std::move(url)), model_(std::move(model)), timeout_ms_(timeout_ms) {}

std::vector<std::vector<double>> HttpEmbeddingClient::embed(
    const std::vector<std::string>& inputs) {
    auto [base, path] = detail::split_url(url_);
    httplib::Client client(base);
    client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);

    json body = {{"input", inputs}, {"model", model_}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
        throw BackendUnavailable("embedding backend unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendUnavailable("embedding backend returned status " +
                                 std::to_string(res->status));
    }
    json parsed;
    try {
        parsed = json::parse(res->body);
    } catch (const json::exception& e) {
        throw BackendUnavailable(std::string("embedding backend sent invalid JSON: ") + e.what());
    }
    if (!parsed.contains("data") || !parsed["data"].is_array()) {
        throw BackendUnavailable("embedding backend reply has no \"data\" array");
    }
    std::vector<std::vector<double>> out;
    for (const auto& item : parsed["data"]) {
        if (!item.contains("embedding") || !item["embedding"].is_array()) {
            throw BackendUnavailable("embedding backend entry has no \"embedding\" array");
        }
        out.push_back(item["embedding"].get<std::vector<double>>());
    }
    if (out.size() != inputs.size()) {
        throw BackendUnavailable("embedding backend returned " + std::to_string(out.size()) +
                                 " embeddings for " + std::to_string(inputs.size()) + " inputs");
    }
    return out;
}

void embed_corpus(CorpusIndex& index, EmbeddingClient& client) {
    std::vector<std::string> texts;
    texts.reserve(index.passages.size());
    for (const auto& chunk : index.passages) texts.push_back(chunk.text);
    index.embeddings = client.embed(texts);
    if (index.embeddings.size() != index.passages.size()) {
        throw BackendUnavailable("embedding backend returned wrong embedding count");
    }
    index.dense_mode = true;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<ScoredPassage> embed_retrieve(const CorpusIndex& index, const std::string& query,
                                          std::size_t k, EmbeddingClient& client) {
    if (!index.dense_mode || index.embeddings.size() != index.passages.size()) {
        throw BackendUnavailable("index has no passage embeddings; re-ingest in dense mode");
    }
    auto query_embeddings = client.embed({query});
    if (query_embeddings.size() != 1) {
        throw BackendUnavailable("embedding backend returned wrong embedding count for query");
    }
    const auto& qe = query_embeddings[0];
    std::vector<double> score(index.passages.size(), 0.0);
    for (std::size_t i = 0; i < index.passages.size(); ++i) {
        if (index.embeddings[i].size() != qe.size()) {
            throw DimensionMismatch("passage \"" + index.passages[i].id + "\" embedding has " +
                                    std::to_string(index.embeddings[i].size()) +
                                    " dimensions, query has " + std::to_string(qe.size()));
        }
        score[i] = cosine(index.embeddings[i], qe);
    }
    return take_top(index, score, k);
}

}  // namespace dagrag
