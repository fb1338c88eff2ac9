#pragma once

// Provider-neutral chat completion gateway.
//
// A Gateway wraps one ChatBackend (an HTTP provider, a scripted oracle, or a
// callback) and adds retries with exponential backoff, request admission
// through a token bucket, and per-tag usage accounting. Gateways are safe to
// share between worker threads.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "prefchain/errors.hpp"

namespace prefchain {

enum class RequestTag { feedback, refine, judge, zero_shot };

constexpr std::array<RequestTag, 4> kAllRequestTags{RequestTag::feedback, RequestTag::refine,
                                                    RequestTag::judge, RequestTag::zero_shot};

std::string_view to_string(RequestTag tag);
std::optional<RequestTag> parse_request_tag(std::string_view s);

struct ChatRequest {
    std::optional<std::string> system;
    std::string user;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    RequestTag tag = RequestTag::refine;
};

// Throws InvalidRequest when the request breaks its invariants.
void check_request(const ChatRequest& request);

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct Completion {
    std::string text;
    TokenUsage usage;
    std::chrono::nanoseconds latency{0};
    int attempt_count = 1;
};

// What a transport returns for one attempt. Usage is optional because not
// every provider reports it; the gateway estimates it when absent.
struct BackendReply {
    std::string text;
    std::optional<TokenUsage> usage;
};

// Thrown by a transport for failures worth retrying (HTTP 429/5xx, timeouts,
// dropped connections). Never escapes the gateway.
class TransientBackendError : public BackendError {
public:
    explicit TransientBackendError(const std::string& message)
        : BackendError("TransientBackendError", message) {}
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    // One attempt. Throws TransientBackendError, BackendRefusal or BackendError.
    virtual BackendReply send(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

// One rule of a script. A rule applies when its tag (if any) equals the
// request tag and `match` is a substring of the user text. The first
// applicable rule produces the response.
struct ScriptRule {
    enum class Kind {
        fixed,           // responses[0], or responses consumed in order (last one repeats)
        prefer_token,    // judge: prefer the answer slot containing `token`
        prefer_higher,   // judge: prefer the slot whose "<token><int>" value is larger
        coin_flip,       // judge: uniformly random A or B
        echo,            // return the user text
    };

    std::optional<RequestTag> tag;
    std::string match;
    Kind kind = Kind::fixed;
    std::vector<std::string> responses;
    std::string token;
};

struct Script {
    std::vector<ScriptRule> rules;
    bool strict = true;
    std::uint64_t seed = 0;
};

Script load_script(const std::filesystem::path& path);
Script parse_script(std::string_view json_text);

class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(Script script);
    BackendReply send(const ChatRequest& request) override;

private:
    std::string respond(const ScriptRule& rule, std::size_t rule_index, const ChatRequest& request);

    Script script_;
    std::mutex mutex_;
    std::vector<std::size_t> cursor_;
    std::mt19937_64 rng_;
};

// Delegates to a callable; used to plug in test oracles and adapters.
class CallbackBackend : public ChatBackend {
public:
    using Handler = std::function<std::string(const ChatRequest&)>;
    explicit CallbackBackend(Handler handler) : handler_(std::move(handler)) {}
    BackendReply send(const ChatRequest& request) override { return {handler_(request), std::nullopt}; }

private:
    Handler handler_;
};

// ---------------------------------------------------------------------------
// HTTP backend (chat-completion JSON over HTTP)

struct HttpEndpoint {
    std::string base_url;                        // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env;                     // name of the env var holding the key
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    std::map<std::string, std::string> extra_headers;
    std::chrono::seconds timeout{120};
};

class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(HttpEndpoint endpoint);
    BackendReply send(const ChatRequest& request) override;

    // Request body for `request`; exposed for tests.
    std::string build_body(const ChatRequest& request) const;
    // Parses a provider response body; throws BackendRefusal / BackendError.
    static BackendReply parse_body(std::string_view body);

private:
    HttpEndpoint endpoint_;
    std::optional<std::string> api_key_;
};

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
    int max_retries = 5;
    std::chrono::milliseconds base_delay{1000};
    std::chrono::milliseconds max_delay{60000};
};

struct GatewayOptions {
    RetryPolicy retry;
    double requests_per_minute = 0.0;  // 0 disables rate limiting
    std::uint64_t jitter_seed = 0;
    // Injected for tests; defaults to std::this_thread::sleep_for.
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct TagUsage {
    std::int64_t calls = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    bool operator==(const TagUsage&) const = default;
};

struct UsageReport {
    std::map<RequestTag, TagUsage> per_tag;

    TagUsage of(RequestTag tag) const;
    TagUsage total() const;
    UsageReport& operator+=(const UsageReport& other);
};

// Token bucket with capacity one: admissions are spaced at least
// 60 / requests_per_minute seconds apart.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_minute);
    void acquire();

private:
    double rate_per_second_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

class Gateway {
public:
    explicit Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options = {});

    Completion complete(const ChatRequest& request);
    UsageReport usage_report() const;

    // Delay before retry number `retry` (0-based), jitter included.
    std::chrono::milliseconds backoff_delay(int retry);

private:
    std::shared_ptr<ChatBackend> backend_;
    GatewayOptions options_;
    std::unique_ptr<RateLimiter> limiter_;
    mutable std::mutex usage_mutex_;
    UsageReport usage_;
    std::mutex rng_mutex_;
    std::mt19937_64 jitter_rng_;
};

}  // namespace prefchain
