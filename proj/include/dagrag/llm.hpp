#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace dagrag {

enum class Role { system, user, assistant };

std::string to_string(Role role);

struct ChatTurn {
    Role role = Role::user;
    std::string content;

    friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

struct TokenUsage {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long total_tokens = 0;

    TokenUsage& operator+=(const TokenUsage& other) {
        prompt_tokens += other.prompt_tokens;
        completion_tokens += other.completion_tokens;
        total_tokens += other.total_tokens;
        return *this;
    }
    friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) { return a += b; }
    friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct ProviderResponse {
    std::string content;
    TokenUsage usage;
    long long latency_ms = 0;
};

// temperature 0 and a fixed seed are always sent so runs are reproducible.
// template_name and fixture_key route scripted lookups; the HTTP provider
// ignores them.
struct CompletionParams {
    double temperature = 0.0;
    long long seed = 42;
    long long max_tokens = 1024;
    std::string template_name;
    std::string fixture_key;
};

struct Provider {
    virtual ~Provider() = default;
    virtual ProviderResponse complete(const std::vector<ChatTurn>& turns,
                                      const CompletionParams& params) = 0;
};

struct ScriptedReply {
    std::string content;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
};

// Deterministic provider for tests: replies come from a fixture map keyed
// "templateName:key". A missing key throws FixtureMiss, never a fallback.
class ScriptedProvider : public Provider {
  public:
    explicit ScriptedProvider(std::map<std::string, ScriptedReply> fixtures);

    // JSON file: {"templateName:key": {"content": str, "prompt_tokens": int,
    // "completion_tokens": int}, ...}
    static ScriptedProvider from_file(const std::string& path);

    ProviderResponse complete(const std::vector<ChatTurn>& turns,
                              const CompletionParams& params) override;

  private:
    std::map<std::string, ScriptedReply> fixtures_;
};

struct RetryPolicy {
    int max_retries = 3;
    int base_delay_ms = 500;
    double multiplier = 2.0;
};

// Sliding-window limiter shared by every call through one provider.
// max_per_window == 0 disables limiting.
class RateLimiter {
  public:
    explicit RateLimiter(std::size_t max_per_window,
                         std::chrono::milliseconds window = std::chrono::minutes(1));

    // Blocks until another request fits in the window.
    void acquire();

  private:
    std::size_t max_;
    std::chrono::milliseconds window_;
    std::mutex mu_;
    std::deque<std::chrono::steady_clock::time_point> stamps_;
};

struct HttpProviderOptions {
    std::string base_url;  // e.g. https://api.example.com/v1
    std::string model;
    std::string api_key_env;  // env var holding the key; empty → no auth header
    int timeout_ms = 60000;
    RetryPolicy retry;
    std::size_t requests_per_minute = 0;
    std::chrono::milliseconds rate_window{60000};
};

// POSTs {base_url}/chat/completions. 408/429/5xx and transport failures are
// retried with exponential backoff; 401/403 throw ProviderAuthError at once.
class HttpProvider : public Provider {
  public:
    explicit HttpProvider(HttpProviderOptions options);

    ProviderResponse complete(const std::vector<ChatTurn>& turns,
                              const CompletionParams& params) override;

  private:
    HttpProviderOptions options_;
    RateLimiter limiter_;
};

}  // namespace dagrag
