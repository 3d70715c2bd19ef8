#include "dagrag/llm.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dagrag/errors.hpp"
#include "url.hpp"

namespace dagrag {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

long long elapsed_ms(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

}  // namespace

std::string to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    throw std::logic_error("unhandled Role value");
}

ScriptedProvider::ScriptedProvider(std::map<std::string, ScriptedReply> fixtures)
    : fixtures_(std::move(fixtures)) {}

ScriptedProvider ScriptedProvider::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open fixture file " + path);
    json parsed;
    try {
        in >> parsed;
    } catch (const json::exception& e) {
        throw MalformedRecord("fixture file " + path + ": " + e.what());
    }
    if (!parsed.is_object()) {
        throw MalformedRecord("fixture file " + path + " is not a JSON object");
    }
    std::map<std::string, ScriptedReply> fixtures;
    for (const auto& [key, value] : parsed.items()) {
        ScriptedReply reply;
        reply.content = value.at("content").get<std::string>();
        reply.prompt_tokens = value.value("prompt_tokens", 0LL);
        reply.completion_tokens = value.value("completion_tokens", 0LL);
        fixtures.emplace(key, std::move(reply));
    }
    return ScriptedProvider(std::move(fixtures));
}

ProviderResponse ScriptedProvider::complete(const std::vector<ChatTurn>&,
                                            const CompletionParams& params) {
    const std::string key = params.template_name + ":" + params.fixture_key;
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) {
        throw FixtureMiss("no fixture for \"" + key + "\"", params.template_name,
                          params.fixture_key);
    }
    ProviderResponse response;
    response.content = it->second.content;
    response.usage.prompt_tokens = it->second.prompt_tokens;
    response.usage.completion_tokens = it->second.completion_tokens;
    response.usage.total_tokens = it->second.prompt_tokens + it->second.completion_tokens;
    response.latency_ms = 0;
    return response;
}

RateLimiter::RateLimiter(std::size_t max_per_window, std::chrono::milliseconds window)
    : max_(max_per_window), window_(window) {}

void RateLimiter::acquire() {
    if (max_ == 0) return;
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = Clock::now();
        while (!stamps_.empty() && now - stamps_.front() >= window_) stamps_.pop_front();
        if (stamps_.size() < max_) {
            stamps_.push_back(now);
            return;
        }
        auto wake = stamps_.front() + window_;
        lock.unlock();
        std::this_thread::sleep_until(wake);
        lock.lock();
    }
}

HttpProvider::HttpProvider(HttpProviderOptions options)
    : options_(std::move(options)),
      limiter_(options_.requests_per_minute, options_.rate_window) {}

ProviderResponse HttpProvider::complete(const std::vector<ChatTurn>& turns,
                                        const CompletionParams& params) {
    std::string api_key;
    if (!options_.api_key_env.empty()) {
        const char* value = std::getenv(options_.api_key_env.c_str());
        if (value == nullptr || *value == '\0') {
            throw ProviderAuthError("environment variable " + options_.api_key_env +
                                    " is not set");
        }
        api_key = value;
    }

    json messages = json::array();
    for (const auto& turn : turns) {
        messages.push_back({{"role", to_string(turn.role)}, {"content", turn.content}});
    }
    const std::string request_body = json{{"model", options_.model},
                                          {"messages", messages},
                                          {"temperature", params.temperature},
                                          {"seed", params.seed},
                                          {"max_tokens", params.max_tokens}}
                                         .dump();

    auto [base, path] = detail::split_url(options_.base_url);
    const std::string endpoint =
        (path == "/" ? std::string{} : path) + "/chat/completions";

    const int attempts = options_.retry.max_retries + 1;
    double delay_ms = static_cast<double>(options_.retry.base_delay_ms);
    int last_status = 0;
    std::string last_body;
    bool timed_out = false;

    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(delay_ms)));
            delay_ms *= options_.retry.multiplier;
        }
        limiter_.acquire();

        httplib::Client client(base);
        client.set_connection_timeout(options_.timeout_ms / 1000,
                                      (options_.timeout_ms % 1000) * 1000);
        client.set_read_timeout(options_.timeout_ms / 1000, (options_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

        auto start = Clock::now();
        auto res = client.Post(endpoint, headers, request_body, "application/json");
        auto latency = elapsed_ms(start);

        if (!res) {
            // Transport failure; a timeout is reported as such once retries
            // are spent.
            timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                        (res.error() == httplib::Error::Read && latency >= options_.timeout_ms);
            last_status = 0;
            last_body = httplib::to_string(res.error());
            continue;
        }

        if (res->status == 401 || res->status == 403) {
            throw ProviderAuthError("provider rejected credentials with status " +
                                        std::to_string(res->status),
                                    res->status, res->body);
        }
        const bool retryable =
            res->status == 408 || res->status == 429 || res->status >= 500;
        if (retryable) {
            timed_out = false;
            last_status = res->status;
            last_body = res->body;
            continue;
        }
        if (res->status != 200) {
            throw ProviderError("provider returned status " + std::to_string(res->status),
                                res->status, res->body);
        }

        json parsed;
        try {
            parsed = json::parse(res->body);
        } catch (const json::exception& e) {
            throw ProviderError(std::string("provider sent invalid JSON: ") + e.what(),
                                res->status, res->body);
        }
        ProviderResponse response;
        try {
            response.content =
                parsed.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw ProviderError(std::string("provider reply missing choices[0].message.content: ") +
                                    e.what(),
                                res->status, res->body);
        }
        if (parsed.contains("usage") && parsed["usage"].is_object()) {
            const auto& usage = parsed["usage"];
            response.usage.prompt_tokens = usage.value("prompt_tokens", 0LL);
            response.usage.completion_tokens = usage.value("completion_tokens", 0LL);
        }
        response.usage.total_tokens =
            response.usage.prompt_tokens + response.usage.completion_tokens;
        response.latency_ms = latency;
        return response;
    }

    if (timed_out) {
        throw Timeout("provider timed out after " + std::to_string(attempts) + " attempts (" +
                      std::to_string(options_.timeout_ms) + " ms each)");
    }
    throw ProviderError("provider failed after " + std::to_string(attempts) +
                            " attempts, last status " + std::to_string(last_status),
                        last_status, last_body);
}

}  // namespace dagrag
