#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dagrag/errors.hpp"
#include "dagrag/llm.hpp"
#include "support/fixtures.hpp"

using namespace dagrag;
using nlohmann::json;

namespace {

// In-process chat endpoint. `handler` decides the reply; `hits` counts
// requests across retries.
class FakeServer {
  public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit FakeServer(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         ++hits_;
                         handler_(req, res);
                     });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int hits() const { return hits_.load(); }

  private:
    httplib::Server server_;
    Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
};

std::string chat_reply(const std::string& content, long long prompt, long long completion) {
    return json{{"choices", json::array({json{{"message", json{{"content", content}}}}})},
                {"usage", {{"prompt_tokens", prompt}, {"completion_tokens", completion}}}}
        .dump();
}

HttpProviderOptions fast_options(const std::string& base_url) {
    HttpProviderOptions options;
    options.base_url = base_url;
    options.model = "test-model";
    options.api_key_env = "DAGRAG_TEST_KEY";
    options.retry.max_retries = 2;
    options.retry.base_delay_ms = 1;
    return options;
}

std::vector<ChatTurn> sample_turns() {
    return {{Role::system, "be terse"}, {Role::user, "what is the capital of France"}};
}

}  // namespace

TEST_CASE("scripted provider returns fixtures by template and key") {
    ScriptedProvider provider({{"merge:0", {"{\"query\": \"q\"}", 11, 4}}});
    CompletionParams params;
    params.template_name = "merge";
    params.fixture_key = "0";
    auto response = provider.complete(sample_turns(), params);
    CHECK(response.content == "{\"query\": \"q\"}");
    CHECK(response.usage.prompt_tokens == 11);
    CHECK(response.usage.completion_tokens == 4);
    CHECK(response.usage.total_tokens == 15);
    CHECK(response.latency_ms == 0);

    params.fixture_key = "1";
    try {
        provider.complete(sample_turns(), params);
        FAIL("expected FixtureMiss");
    } catch (const FixtureMiss& e) {
        CHECK(e.template_name == "merge");
        CHECK(e.key == "1");
    }
}

TEST_CASE("scripted provider loads fixture files") {
    testsupport::TempDir dir;
    testsupport::FixtureBuilder fixtures;
    fixtures.raw("compose:", "done", 9, 3);
    fixtures.write(dir.file("fx.json"));

    auto provider = ScriptedProvider::from_file(dir.file("fx.json"));
    CompletionParams params;
    params.template_name = "compose";
    auto response = provider.complete(sample_turns(), params);
    CHECK(response.content == "done");
    CHECK(response.usage.total_tokens == 12);

    CHECK_THROWS_AS(ScriptedProvider::from_file(dir.file("absent.json")), IoError);
    testsupport::write_file(dir.file("bad.json"), "not json");
    CHECK_THROWS_AS(ScriptedProvider::from_file(dir.file("bad.json")), MalformedRecord);
    testsupport::write_file(dir.file("arr.json"), "[]");
    CHECK_THROWS_AS(ScriptedProvider::from_file(dir.file("arr.json")), MalformedRecord);
}

TEST_CASE("rate limiter spaces requests beyond the window size") {
    using namespace std::chrono;
    RateLimiter limiter(2, milliseconds(80));
    auto start = steady_clock::now();
    limiter.acquire();
    limiter.acquire();
    limiter.acquire();  // third must wait for the window to roll
    auto waited = duration_cast<milliseconds>(steady_clock::now() - start);
    CHECK(waited.count() >= 70);

    RateLimiter unlimited(0, milliseconds(80));
    auto t2 = steady_clock::now();
    for (int i = 0; i < 100; ++i) unlimited.acquire();
    CHECK(duration_cast<milliseconds>(steady_clock::now() - t2).count() < 50);
}

TEST_CASE("http provider round-trips a chat completion") {
    ::setenv("DAGRAG_TEST_KEY", "sk-test-123", 1);
    std::string seen_auth;
    std::string seen_body;
    FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        res.set_content(chat_reply("Paris", 21, 7), "application/json");
    });

    HttpProvider provider(fast_options(server.base_url()));
    CompletionParams params;
    params.max_tokens = 256;
    auto response = provider.complete(sample_turns(), params);

    CHECK(response.content == "Paris");
    CHECK(response.usage.prompt_tokens == 21);
    CHECK(response.usage.completion_tokens == 7);
    CHECK(response.usage.total_tokens == 28);
    CHECK(server.hits() == 1);
    CHECK(seen_auth == "Bearer sk-test-123");

    auto body = json::parse(seen_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["seed"] == 42);
    CHECK(body["max_tokens"] == 256);
    REQUIRE(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "what is the capital of France");
}

TEST_CASE("http provider retries transient failures") {
    ::setenv("DAGRAG_TEST_KEY", "sk-test-123", 1);
    std::atomic<int> n{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        if (++n <= 2) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
        } else {
            res.set_content(chat_reply("ok", 1, 1), "application/json");
        }
    });

    HttpProvider provider(fast_options(server.base_url()));
    auto response = provider.complete(sample_turns(), {});
    CHECK(response.content == "ok");
    CHECK(server.hits() == 3);
}

TEST_CASE("http provider surfaces exhausted retries as ProviderError") {
    ::setenv("DAGRAG_TEST_KEY", "sk-test-123", 1);
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        res.status = 429;
        res.set_content("slow down", "text/plain");
    });

    HttpProvider provider(fast_options(server.base_url()));
    try {
        provider.complete(sample_turns(), {});
        FAIL("expected ProviderError");
    } catch (const ProviderAuthError&) {
        FAIL("429 is not an auth failure");
    } catch (const ProviderError& e) {
        CHECK(e.status == 429);
        CHECK(e.body == "slow down");
    }
    CHECK(server.hits() == 3);  // max_retries 2 → 3 attempts
}

TEST_CASE("http provider treats 401 as fatal without retrying") {
    ::setenv("DAGRAG_TEST_KEY", "sk-test-123", 1);
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content("bad key", "text/plain");
    });

    HttpProvider provider(fast_options(server.base_url()));
    CHECK_THROWS_AS(provider.complete(sample_turns(), {}), ProviderAuthError);
    CHECK(server.hits() == 1);
}

TEST_CASE("http provider rejects malformed replies") {
    ::setenv("DAGRAG_TEST_KEY", "sk-test-123", 1);
    SUBCASE("invalid json") {
        FakeServer server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content("<html>oops</html>", "text/html");
        });
        HttpProvider provider(fast_options(server.base_url()));
        CHECK_THROWS_AS(provider.complete(sample_turns(), {}), ProviderError);
    }
    SUBCASE("missing content field") {
        FakeServer server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"choices": []})", "application/json");
        });
        HttpProvider provider(fast_options(server.base_url()));
        CHECK_THROWS_AS(provider.complete(sample_turns(), {}), ProviderError);
    }
}

TEST_CASE("unset key variable fails before any request is sent") {
    ::unsetenv("DAGRAG_MISSING_KEY");
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        res.set_content(chat_reply("never", 0, 0), "application/json");
    });
    auto options = fast_options(server.base_url());
    options.api_key_env = "DAGRAG_MISSING_KEY";
    HttpProvider provider(options);
    CHECK_THROWS_AS(provider.complete(sample_turns(), {}), ProviderAuthError);
    CHECK(server.hits() == 0);

    // An empty api_key_env means an open endpoint: no auth header at all.
    std::string seen_auth = "sentinel";
    FakeServer open_server([&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        res.set_content(chat_reply("open", 0, 0), "application/json");
    });
    auto open_options = fast_options(open_server.base_url());
    open_options.api_key_env.clear();
    HttpProvider open_provider(open_options);
    CHECK(open_provider.complete(sample_turns(), {}).content == "open");
    CHECK(seen_auth.empty());
}
