#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace dmqr::llm {

struct ChatRequest {
    std::optional<std::string> system;
    std::string user;
    double temperature = 0.0;  // rewriting/selection default; answers use 0.2
    int max_tokens = 512;
    std::string model = "default";
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    Usage usage;
    int latency_ms = 0;
    int retries = 0;  // transport retries spent on this call
};

struct PromptTemplate {
    std::string name;
    std::string body;
};

/// Pure placeholder substitution. A placeholder is `{identifier}`; anything
/// else, including stray braces, passes through verbatim. No escaping of
/// binding content. Throws MissingPlaceholder when a referenced placeholder
/// has no binding.
std::string render(const PromptTemplate& tpl, const std::map<std::string, std::string>& bindings);

/// Stable fixture key for a request: SHA-256 over system + "\n" + user.
std::string prompt_hash(const ChatRequest& request);

/// Token-bucket limiter; rps <= 0 disables it.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_second = 0.0);
    void acquire();

private:
    double rps_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

class Completer {
public:
    virtual ~Completer() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// Deterministic scripted backend. Fixtures are keyed by the prompt hash,
/// by substring patterns matched against system+"\n"+user (longest match
/// wins, ties by lexicographically smaller pattern), or by the catch-all
/// "*". Completing a prompt with no fixture is an EmptyCompletion error so
/// missing fixtures fail loudly in tests.
class ScriptedCompleter : public Completer {
public:
    ScriptedCompleter() = default;
    ScriptedCompleter(ScriptedCompleter&& other) noexcept;
    ScriptedCompleter& operator=(ScriptedCompleter&& other) noexcept;
    static ScriptedCompleter from_file(const std::filesystem::path& path);

    void add_hash(std::string sha_hex, std::string completion);
    void add_pattern(std::string substring, std::string completion);
    void set_fallback(std::string completion);

    ChatResponse complete(const ChatRequest& request) override;

    int calls() const;
    std::vector<std::string> prompts() const;

private:
    std::map<std::string, std::string> by_hash_;
    std::map<std::string, std::string> by_pattern_;
    std::optional<std::string> fallback_;
    mutable std::mutex mutex_;
    int calls_ = 0;
    std::vector<std::string> prompts_;
};

struct HttpCompleterConfig {
    std::string url;    // e.g. https://host/v1/chat/completions
    std::string api_key;
    std::string model = "default";
    int timeout_ms = 10000;
    int max_retries = 2;       // transient failures only
    int backoff_base_ms = 250; // doubled per attempt
    double requests_per_second = 0.0;
};

/// Chat-completions client: POST {model, messages, temperature, max_tokens},
/// read choices[0].message.content. Retries transport errors, 429 and 5xx
/// with exponential backoff; auth and bad-request failures surface at once.
class HttpCompleter : public Completer {
public:
    explicit HttpCompleter(HttpCompleterConfig config);
    ChatResponse complete(const ChatRequest& request) override;

private:
    HttpCompleterConfig config_;
    RateLimiter limiter_;
};

}  // namespace dmqr::llm
