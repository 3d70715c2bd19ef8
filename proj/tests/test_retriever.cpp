#include <doctest.h>

#include <random>
#include <sstream>

#include "dagrag/errors.hpp"
#include "dagrag/retriever.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dagrag;

namespace {

CorpusIndex small_index() {
    std::vector<PassageChunk> chunks{
        {"a2", "", "the amber harbor holds amber light", 0},
        {"a1", "", "amber light on the water", 0},
        {"b1", "", "basalt cliffs and granite peaks", 0},
        {"c1", "", "cedar forest by the meadow", 0},
    };
    return build_index(std::move(chunks));
}

// One-hot vectors aligned with passage order; the query embeds as the
// one-hot of a chosen passage.
struct OneHotClient : EmbeddingClient {
    std::size_t dim = 0;
    std::size_t query_hot = 0;
    std::size_t corpus_cursor = 0;

    std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs) override {
        std::vector<std::vector<double>> out;
        for (const auto& input : inputs) {
            (void)input;
            std::vector<double> v(dim, 0.0);
            if (inputs.size() == 1) {
                v[query_hot] = 1.0;
            } else {
                v[corpus_cursor % dim] = 1.0;
                ++corpus_cursor;
            }
            out.push_back(std::move(v));
        }
        if (inputs.size() > 1) corpus_cursor = 0;
        return out;
    }
};

}  // namespace

TEST_CASE("ingest_corpus parses records and carries line numbers on errors") {
    SUBCASE("valid corpus") {
        std::istringstream in(
            R"({"id":"d1","title":"T","text":"alpha beta"})" "\n"
            "\n"
            R"({"id":"d2","title":null,"text":"gamma"})" "\n");
        auto index = ingest_corpus(in);
        REQUIRE(index.doc_count() == 2);
        CHECK(index.passages[0].id == "d1");
        CHECK(index.passages[0].token_count == 2);
        CHECK(index.passages[1].title.empty());
        CHECK(index.avg_doc_length == doctest::Approx(1.5));
    }
    SUBCASE("malformed json cites its line") {
        std::istringstream in(R"({"id":"d1","text":"x"})" "\nnot json\n");
        try {
            ingest_corpus(in);
            FAIL("expected MalformedRecord");
        } catch (const MalformedRecord& e) {
            CHECK(e.line == 2);
        }
    }
    SUBCASE("duplicate id cites its line") {
        std::istringstream in(
            R"({"id":"d1","text":"x"})" "\n"
            R"({"id":"d1","text":"y"})" "\n");
        try {
            ingest_corpus(in);
            FAIL("expected DuplicateId");
        } catch (const DuplicateId& e) {
            CHECK(e.line == 2);
        }
    }
    SUBCASE("blank text is rejected") {
        std::istringstream in(R"({"id":"d1","text":"  ,, "})" "\n");
        CHECK_THROWS_AS(ingest_corpus(in), EmptyPassage);
    }
    SUBCASE("missing id is rejected") {
        std::istringstream in(R"({"text":"x"})" "\n");
        CHECK_THROWS_AS(ingest_corpus(in), MalformedRecord);
    }
}

TEST_CASE("retrieve ranks by BM25 with id tie-breaks") {
    auto index = small_index();

    SUBCASE("term frequency wins") {
        auto hits = retrieve(index, "amber", 2);
        REQUIRE(hits.size() == 2);
        CHECK(hits[0].passage.id == "a2");  // two occurrences beat one
        CHECK(hits[1].passage.id == "a1");
        CHECK(hits[0].rank == 1);
        CHECK(hits[1].rank == 2);
        CHECK(hits[0].score > hits[1].score);
    }
    SUBCASE("zero-scoring passages fill up to k, ties by id") {
        auto hits = retrieve(index, "amber", 4);
        REQUIRE(hits.size() == 4);
        CHECK(hits[2].passage.id == "b1");  // 0.0 == 0.0, id order
        CHECK(hits[3].passage.id == "c1");
        CHECK(hits[2].score == 0.0);
    }
    SUBCASE("k larger than the corpus returns everything") {
        CHECK(retrieve(index, "amber", 50).size() == index.doc_count());
    }
    SUBCASE("empty query throws") {
        CHECK_THROWS_AS(retrieve(index, "  ?! ", 3), EmptyQuery);
    }
    SUBCASE("retrieval is pure") {
        auto a = retrieve(index, "amber granite", 3);
        auto b = retrieve(index, "amber granite", 3);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].passage.id == b[i].passage.id);
            CHECK(a[i].score == b[i].score);
        }
    }
}

TEST_CASE("retrieve matches the brute-force scorer on random corpora") {
    std::mt19937 rng(404);
    std::uniform_int_distribution<std::size_t> kdist(1, 25);
    for (int trial = 0; trial < 200; ++trial) {
        auto chunks = testsupport::random_corpus(rng);
        auto index = build_index(chunks);
        const auto query = testsupport::random_query(rng);
        const std::size_t k = kdist(rng);
        auto got = retrieve(index, query, k);
        auto want = testsupport::brute_force_bm25(index, query, k);
        CAPTURE(trial);
        CAPTURE(query);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].passage.id == want[i].passage.id);
            CHECK(got[i].score == want[i].score);  // bitwise, no tolerance
            CHECK(got[i].rank == want[i].rank);
        }
    }
}

TEST_CASE("save_index and load_index round-trip") {
    testsupport::TempDir dir;
    auto index = small_index();
    save_index(index, dir.file("idx"));
    auto loaded = load_index(dir.file("idx"));

    CHECK(loaded.doc_count() == index.doc_count());
    CHECK(loaded.avg_doc_length == index.avg_doc_length);
    CHECK(loaded.passages == index.passages);
    CHECK(loaded.term_postings == index.term_postings);
    CHECK_FALSE(loaded.dense_mode);

    auto a = retrieve(index, "amber granite meadow", 4);
    auto b = retrieve(loaded, "amber granite meadow", 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].passage.id == b[i].passage.id);
        CHECK(a[i].score == b[i].score);
    }
}

TEST_CASE("load_index rejects missing or damaged stores") {
    testsupport::TempDir dir;
    CHECK_THROWS_AS(load_index(dir.file("nowhere")), IoError);

    auto index = small_index();
    save_index(index, dir.file("idx"));
    testsupport::write_file(dir.file("idx") + "/manifest.json",
                            R"({"format_version": 99, "doc_count": 4})");
    CHECK_THROWS_AS(load_index(dir.file("idx")), MalformedRecord);
}

TEST_CASE("dense retrieval uses the embedding backend") {
    auto index = small_index();
    OneHotClient client;
    client.dim = index.doc_count();

    SUBCASE("embed_retrieve without embeddings is unavailable") {
        CHECK_THROWS_AS(embed_retrieve(index, "amber", 2, client), BackendUnavailable);
    }

    embed_corpus(index, client);
    CHECK(index.dense_mode);
    REQUIRE(index.embeddings.size() == index.doc_count());

    SUBCASE("one-hot query returns the aligned passage first") {
        for (std::size_t target = 0; target < index.doc_count(); ++target) {
            client.query_hot = target;
            auto hits = embed_retrieve(index, "whatever", 1, client);
            REQUIRE(hits.size() == 1);
            CHECK(hits[0].passage.id == index.passages[target].id);
            CHECK(hits[0].score == doctest::Approx(1.0));
        }
    }

    SUBCASE("dimension mismatches are detected") {
        client.dim = index.doc_count() + 3;
        client.query_hot = 0;
        CHECK_THROWS_AS(embed_retrieve(index, "whatever", 2, client), DimensionMismatch);
    }

    SUBCASE("dense index round-trips through disk") {
        testsupport::TempDir dir;
        save_index(index, dir.file("idx"));
        auto loaded = load_index(dir.file("idx"));
        CHECK(loaded.dense_mode);
        CHECK(loaded.embeddings == index.embeddings);
    }
}
