#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dagrag/text.hpp"

namespace dagrag {

struct PassageChunk {
    std::string id;
    std::string title;  // empty when the record carried null or no title
    std::string text;
    std::size_t token_count = 0;  // whitespace-split count of normalized text

    friend bool operator==(const PassageChunk&, const PassageChunk&) = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

// tf of one term inside one document, addressed by position in
// CorpusIndex::passages.
struct Posting {
    std::size_t doc = 0;
    std::size_t tf = 0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

// Immutable after ingest; concurrent reads are safe.
struct CorpusIndex {
    std::vector<PassageChunk> passages;  // ingestion order
    std::unordered_map<std::string, std::size_t> by_id;
    std::map<std::string, std::vector<Posting>> term_postings;
    double avg_doc_length = 0.0;
    Bm25Params params;
    bool dense_mode = false;
    std::vector<std::vector<double>> embeddings;  // parallel to passages when dense

    std::size_t doc_count() const noexcept { return passages.size(); }
    const PassageChunk* find(std::string_view id) const noexcept;
};

struct ScoredPassage {
    PassageChunk passage;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based, contiguous within one result list
};

// Builds the inverted index over already-parsed chunks. Recomputes each
// token_count. Throws DuplicateId or EmptyPassage (no line numbers).
CorpusIndex build_index(std::vector<PassageChunk> chunks, const Bm25Params& params = {});

// Parses JSONL records {"id","title","text"} and indexes them. Errors carry
// the 1-based input line: MalformedRecord, DuplicateId, EmptyPassage.
CorpusIndex ingest_corpus(std::istream& in, const Bm25Params& params = {});

// Same, reading from a file. Throws IoError when the file cannot be opened.
CorpusIndex ingest_corpus_file(const std::string& path, const Bm25Params& params = {});

// Top-k by BM25 over every passage (passages sharing no query term score 0,
// so the result is short only when the corpus is). Ties break by passage id
// ascending. Throws EmptyQuery when the query normalizes to nothing.
std::vector<ScoredPassage> retrieve(const CorpusIndex& index, const std::string& query,
                                    std::size_t k);

// Persisted layout: manifest.json, passages.jsonl, postings.jsonl, and
// embeddings.jsonl when dense mode is on. save throws IoError; load throws
// IoError or MalformedRecord (bad content or unsupported format_version).
void save_index(const CorpusIndex& index, const std::string& dir);
CorpusIndex load_index(const std::string& dir);

struct EmbeddingClient {
    virtual ~EmbeddingClient() = default;
    // One embedding per input, in order. Throws BackendUnavailable.
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs) = 0;
};

// POSTs {"input": [...], "model": ...} to the given URL and reads
// {"data": [{"embedding": [...]}, ...]}.
class HttpEmbeddingClient : public EmbeddingClient {
  public:
    HttpEmbeddingClient(std::string url, std::string model, int timeout_ms = 30000);
    std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs) override;

  private:
    std::string url_;
    std::string model_;
    int timeout_ms_;
};

// Embeds every passage and flips the index into dense mode.
void embed_corpus(CorpusIndex& index, EmbeddingClient& client);

// Top-k by cosine similarity against precomputed passage embeddings; same
// tie-break as retrieve. Throws BackendUnavailable (no embeddings or client
// failure) or DimensionMismatch.
std::vector<ScoredPassage> embed_retrieve(const CorpusIndex& index, const std::string& query,
                                          std::size_t k, EmbeddingClient& client);

}  // namespace dagrag
