#include "dmqr/llm.hpp"

#include "dmqr/errors.hpp"
#include "dmqr/hash.hpp"
#include "dmqr/text.hpp"


#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <fstream>
#include <thread>

namespace dmqr::llm {

namespace {

bool is_ident_char(unsigned char c) { return std::isalnum(c) != 0 || c == '_'; }

int count_tokens(const std::string& s) {
    return static_cast<int>(text::tokenize(s).size());
}

std::string full_prompt(const ChatRequest& request) {
    if (request.system) return *request.system + "\n" + request.user;
    return request.user;
}

}  // namespace

std::string render(const PromptTemplate& tpl, const std::map<std::string, std::string>& bindings) {
    std::string out;
    out.reserve(tpl.body.size());
    const std::string& body = tpl.body;
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident_char(static_cast<unsigned char>(body[j]))) ++j;
            if (j > i + 1 && j < body.size() && body[j] == '}' &&
                !std::isdigit(static_cast<unsigned char>(body[i + 1]))) {
                std::string name = body.substr(i + 1, j - i - 1);
                auto it = bindings.find(name);
                if (it == bindings.end()) {
                    throw Error(ErrorCode::MissingPlaceholder,
                                "template '" + tpl.name + "' references {" + name + "}");
                }
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out.push_back(body[i]);
        ++i;
    }
    return out;
}

std::string prompt_hash(const ChatRequest& request) {
    return hash::sha256_hex(full_prompt(request));
}

RateLimiter::RateLimiter(double requests_per_second)
    : rps_(requests_per_second), tokens_(requests_per_second), last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    if (rps_ <= 0.0) return;
    std::unique_lock lock(mutex_);
    for (;;) {
        auto now = std::chrono::steady_clock::now();
        double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(rps_, tokens_ + elapsed * rps_);
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        double wait_s = (1.0 - tokens_) / rps_;
        lock.unlock();
        std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
        lock.lock();
    }
}

ScriptedCompleter::ScriptedCompleter(ScriptedCompleter&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    by_hash_ = std::move(other.by_hash_);
    by_pattern_ = std::move(other.by_pattern_);
    fallback_ = std::move(other.fallback_);
    calls_ = other.calls_;
    prompts_ = std::move(other.prompts_);
}

ScriptedCompleter& ScriptedCompleter::operator=(ScriptedCompleter&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        by_hash_ = std::move(other.by_hash_);
        by_pattern_ = std::move(other.by_pattern_);
        fallback_ = std::move(other.fallback_);
        calls_ = other.calls_;
        prompts_ = std::move(other.prompts_);
    }
    return *this;
}

ScriptedCompleter ScriptedCompleter::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open fixture file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError, "fixture file " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) {
        throw Error(ErrorCode::IoError, "fixture file must hold a JSON object");
    }
    ScriptedCompleter mock;
    for (auto& [key, value] : j.items()) {
        std::string completion = value.get<std::string>();
        if (key == "*") {
            mock.set_fallback(std::move(completion));
        } else if (hash::looks_like_sha256_hex(key)) {
            mock.add_hash(key, std::move(completion));
        } else {
            mock.add_pattern(key, std::move(completion));
        }
    }
    return mock;
}

void ScriptedCompleter::add_hash(std::string sha_hex, std::string completion) {
    std::lock_guard lock(mutex_);
    by_hash_[std::move(sha_hex)] = std::move(completion);
}

void ScriptedCompleter::add_pattern(std::string substring, std::string completion) {
    std::lock_guard lock(mutex_);
    by_pattern_[std::move(substring)] = std::move(completion);
}

void ScriptedCompleter::set_fallback(std::string completion) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(completion);
}

ChatResponse ScriptedCompleter::complete(const ChatRequest& request) {
    std::string prompt = full_prompt(request);
    std::lock_guard lock(mutex_);
    ++calls_;
    prompts_.push_back(prompt);

    const std::string* found = nullptr;
    if (auto it = by_hash_.find(hash::sha256_hex(prompt)); it != by_hash_.end()) {
        found = &it->second;
    }
    if (!found) {
        const std::string* best_key = nullptr;
        for (const auto& [pattern, completion] : by_pattern_) {
            if (prompt.find(pattern) == std::string::npos) continue;
            if (!best_key || pattern.size() > best_key->size()) {
                best_key = &pattern;
                found = &completion;
            }
        }
    }
    if (!found && fallback_) found = &*fallback_;
    if (!found) {
        throw Error(ErrorCode::EmptyCompletion,
                    "no fixture for prompt starting with '" +
                        text::truncate_at_whitespace(prompt, 80) + "'");
    }

    ChatResponse response;
    response.text = *found;
    response.usage.prompt_tokens = count_tokens(prompt);
    response.usage.completion_tokens = count_tokens(response.text);
    response.latency_ms = 0;
    return response;
}

int ScriptedCompleter::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<std::string> ScriptedCompleter::prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
}

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    std::size_t path_begin = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_begin == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace

HttpCompleter::HttpCompleter(HttpCompleterConfig config)
    : config_(std::move(config)), limiter_(config_.requests_per_second) {
    if (config_.url.empty()) {
        throw Error(ErrorCode::InvalidConfig, "chat completions url is not configured");
    }
}

ChatResponse HttpCompleter::complete(const ChatRequest& request) {
    if (text::trim(request.user).empty()) {
        throw Error(ErrorCode::BadRequest, "chat request has an empty user message");
    }

    nlohmann::json messages = nlohmann::json::array();
    if (request.system) {
        messages.push_back({{"role", "system"}, {"content", *request.system}});
    }
    messages.push_back({{"role", "user"}, {"content", request.user}});
    nlohmann::json body = {{"model", request.model.empty() ? config_.model : request.model},
                           {"messages", messages},
                           {"temperature", request.temperature},
                           {"max_tokens", request.max_tokens}};
    std::string payload = body.dump();

    auto [origin, path] = split_url(config_.url);
    auto started = std::chrono::steady_clock::now();

    std::string last_error;
    int last_retry_after = 0;
    ErrorCode last_code = ErrorCode::Transport;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_base_ms * (1 << (attempt - 1))));
        }
        limiter_.acquire();

        httplib::Client client(origin);
        client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!config_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        }

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_code = ErrorCode::Transport;
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw Error(ErrorCode::Auth, "provider returned HTTP " + std::to_string(res->status));
        }
        if (res->status == 400) {
            throw Error(ErrorCode::BadRequest, "provider rejected the request: " + res->body);
        }
        if (res->status == 429) {
            last_code = ErrorCode::RateLimited;
            last_error = "provider rate limit";
            if (res->has_header("Retry-After")) {
                last_retry_after = std::atoi(res->get_header_value("Retry-After").c_str());
            }
            continue;
        }
        if (res->status >= 500) {
            last_code = ErrorCode::Transport;
            last_error = "provider returned HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(ErrorCode::ProtocolError,
                        "unexpected HTTP status " + std::to_string(res->status));
        }

        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ProtocolError, std::string("unparseable provider body: ") + e.what());
        }
        if (!parsed.contains("choices") || parsed["choices"].empty() ||
            !parsed["choices"][0].contains("message") ||
            !parsed["choices"][0]["message"].contains("content")) {
            throw Error(ErrorCode::EmptyCompletion, "provider response carries no content");
        }

        ChatResponse response;
        const auto& content = parsed["choices"][0]["message"]["content"];
        response.text = content.is_null() ? "" : content.get<std::string>();
        if (parsed.contains("usage")) {
            response.usage.prompt_tokens = parsed["usage"].value("prompt_tokens", 0);
            response.usage.completion_tokens = parsed["usage"].value("completion_tokens", 0);
        } else {
            response.usage.prompt_tokens = count_tokens(full_prompt(request));
            response.usage.completion_tokens = count_tokens(response.text);
        }
        response.latency_ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                   std::chrono::steady_clock::now() - started)
                                                   .count());
        response.retries = attempt;
        return response;
    }

    Error err(last_code, last_error + " after " + std::to_string(config_.max_retries) + " retries");
    err.set_retry_after_s(last_retry_after);
    throw err;
}

}  // namespace dmqr::llm
