#include "prefchain/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prefchain/chain.hpp"
#include "prefchain/prompts.hpp"

namespace prefchain {

using nlohmann::json;

std::string_view to_string(RequestTag tag) {
    switch (tag) {
        case RequestTag::feedback: return "feedback";
        case RequestTag::refine: return "refine";
        case RequestTag::judge: return "judge";
        case RequestTag::zero_shot: return "zero_shot";
    }
    return "unknown";
}

std::optional<RequestTag> parse_request_tag(std::string_view s) {
    for (auto tag : kAllRequestTags) {
        if (to_string(tag) == s) return tag;
    }
    return std::nullopt;
}

void check_request(const ChatRequest& request) {
    if (request.user.empty()) throw InvalidRequest("request user text is empty");
    if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
        throw InvalidRequest("temperature must lie in [0, 2]");
    }
    if (request.max_output_tokens <= 0) throw InvalidRequest("max_output_tokens must be positive");
}

// ---------------------------------------------------------------------------
// Scripted backend

namespace {

ScriptRule parse_rule(const json& j) {
    ScriptRule rule;
    if (j.contains("tag") && !j["tag"].is_null()) {
        const auto name = j["tag"].get<std::string>();
        if (name != "*") {
            rule.tag = parse_request_tag(name);
            if (!rule.tag) throw ConfigError("script rule has unknown tag '" + name + "'");
        }
    }
    rule.match = j.value("match", std::string());
    if (rule.match == "*") rule.match.clear();

    if (j.contains("response")) {
        rule.kind = ScriptRule::Kind::fixed;
        rule.responses.push_back(j["response"].get<std::string>());
    } else if (j.contains("responses")) {
        rule.kind = ScriptRule::Kind::fixed;
        rule.responses = j["responses"].get<std::vector<std::string>>();
        if (rule.responses.empty()) throw ConfigError("script rule has an empty responses list");
    } else if (j.contains("prefer_token")) {
        rule.kind = ScriptRule::Kind::prefer_token;
        rule.token = j["prefer_token"].get<std::string>();
    } else if (j.contains("prefer_higher")) {
        rule.kind = ScriptRule::Kind::prefer_higher;
        rule.token = j["prefer_higher"].get<std::string>();
    } else if (j.value("coin_flip", false)) {
        rule.kind = ScriptRule::Kind::coin_flip;
    } else if (j.value("echo", false)) {
        rule.kind = ScriptRule::Kind::echo;
    } else {
        throw ConfigError("script rule needs one of response, responses, prefer_token, prefer_higher, "
                          "coin_flip, echo");
    }
    return rule;
}

std::optional<long long> marker_value(std::string_view text, std::string_view marker) {
    const auto pos = text.find(marker);
    if (pos == std::string_view::npos) return std::nullopt;
    std::size_t i = pos + marker.size();
    bool negative = false;
    if (i < text.size() && text[i] == '-') {
        negative = true;
        ++i;
    }
    const std::size_t digits_start = i;
    long long value = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        value = value * 10 + (text[i] - '0');
        ++i;
    }
    if (i == digits_start) return std::nullopt;
    return negative ? -value : value;
}

std::string judge_reply(Preference p, std::string_view reason) {
    return "Preferred: " + std::string(to_string(p)) + "\nReason: " + std::string(reason);
}

}  // namespace

Script parse_script(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("script is not valid JSON: ") + e.what());
    }
    Script script;
    script.strict = j.value("strict", true);
    script.seed = j.value("seed", std::uint64_t{0});
    if (!j.contains("rules") || !j["rules"].is_array()) throw ConfigError("script lacks a rules array");
    for (const auto& r : j["rules"]) script.rules.push_back(parse_rule(r));
    return script;
}

Script load_script(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read script " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_script(buf.str());
}

ScriptedBackend::ScriptedBackend(Script script)
    : script_(std::move(script)), cursor_(script_.rules.size(), 0), rng_(script_.seed) {}

BackendReply ScriptedBackend::send(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < script_.rules.size(); ++i) {
        const auto& rule = script_.rules[i];
        if (rule.tag && *rule.tag != request.tag) continue;
        if (!rule.match.empty() && request.user.find(rule.match) == std::string::npos) continue;
        return {respond(rule, i, request), std::nullopt};
    }
    if (script_.strict) {
        throw BackendRefusal("scripted backend has no rule for tag " + std::string(to_string(request.tag)));
    }
    return {request.user, std::nullopt};
}

std::string ScriptedBackend::respond(const ScriptRule& rule, std::size_t rule_index, const ChatRequest& request) {
    switch (rule.kind) {
        case ScriptRule::Kind::fixed: {
            auto& cursor = cursor_[rule_index];
            const auto& text = rule.responses[std::min(cursor, rule.responses.size() - 1)];
            ++cursor;
            return text;
        }
        case ScriptRule::Kind::echo:
            return request.user;
        case ScriptRule::Kind::coin_flip:
            return judge_reply((rng_() & 1u) ? Preference::A : Preference::B, "scripted coin flip");
        case ScriptRule::Kind::prefer_token:
        case ScriptRule::Kind::prefer_higher: {
            const auto answers = extract_judge_answers(request.user);
            if (!answers) throw BackendRefusal("scripted judge rule applied to a prompt without answer blocks");
            Preference p = Preference::tie;
            if (rule.kind == ScriptRule::Kind::prefer_token) {
                const bool in_a = answers->first.find(rule.token) != std::string::npos;
                const bool in_b = answers->second.find(rule.token) != std::string::npos;
                if (in_a != in_b) p = in_a ? Preference::A : Preference::B;
            } else {
                const auto a = marker_value(answers->first, rule.token);
                const auto b = marker_value(answers->second, rule.token);
                if (a && b && *a != *b) p = *a > *b ? Preference::A : Preference::B;
            }
            return judge_reply(p, "scripted content rule");
        }
    }
    return {};
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.base_url.empty()) throw ConfigError("HTTP backend requires a base_url");
    if (!endpoint_.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            api_key_ = key;
        }
    }
}

std::string HttpBackend::build_body(const ChatRequest& request) const {
    json messages = json::array();
    if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
    messages.push_back({{"role", "user"}, {"content", request.user}});
    json body{{"messages", messages},
              {"temperature", request.temperature},
              {"max_tokens", request.max_output_tokens}};
    if (!endpoint_.model.empty()) body["model"] = endpoint_.model;
    return body.dump();
}

BackendReply HttpBackend::parse_body(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        throw BackendError("provider returned a non-JSON body");
    }
    if (j.contains("error") && !j["error"].is_null()) {
        throw BackendError("provider error: " + j["error"].dump());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw BackendRefusal("provider returned no choices");
    }
    const auto& choice = j["choices"][0];
    if (choice.value("finish_reason", std::string()) == "content_filter") {
        throw BackendRefusal("provider blocked the completion (content_filter)");
    }
    std::string text;
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
        text = choice["message"]["content"].get<std::string>();
    }
    if (text.empty()) throw BackendRefusal("provider returned empty content");

    BackendReply reply{std::move(text), std::nullopt};
    if (j.contains("usage") && j["usage"].is_object()) {
        reply.usage = TokenUsage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                                 j["usage"].value("completion_tokens", std::int64_t{0})};
    }
    return reply;
}

BackendReply HttpBackend::send(const ChatRequest& request) {
    httplib::Client client(endpoint_.base_url);
    client.set_connection_timeout(endpoint_.timeout);
    client.set_read_timeout(endpoint_.timeout);
    client.set_write_timeout(endpoint_.timeout);

    httplib::Headers headers;
    if (api_key_) headers.emplace(endpoint_.auth_header, endpoint_.auth_prefix + *api_key_);
    for (const auto& [k, v] : endpoint_.extra_headers) headers.emplace(k, v);

    auto res = client.Post(endpoint_.path, headers, build_body(request), "application/json");
    if (!res) {
        throw TransientBackendError("HTTP request failed: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 429 || status == 408 || status >= 500) {
        throw TransientBackendError("HTTP status " + std::to_string(status));
    }
    if (status < 200 || status >= 300) {
        throw BackendError("HTTP status " + std::to_string(status) + ": " + res->body.substr(0, 200));
    }
    return parse_body(res->body);
}

// ---------------------------------------------------------------------------
// Gateway

TagUsage UsageReport::of(RequestTag tag) const {
    const auto it = per_tag.find(tag);
    return it == per_tag.end() ? TagUsage{} : it->second;
}

TagUsage UsageReport::total() const {
    TagUsage t;
    for (const auto& [tag, u] : per_tag) {
        t.calls += u.calls;
        t.prompt_tokens += u.prompt_tokens;
        t.completion_tokens += u.completion_tokens;
    }
    return t;
}

UsageReport& UsageReport::operator+=(const UsageReport& other) {
    for (const auto& [tag, u] : other.per_tag) {
        auto& mine = per_tag[tag];
        mine.calls += u.calls;
        mine.prompt_tokens += u.prompt_tokens;
        mine.completion_tokens += u.completion_tokens;
    }
    return *this;
}

RateLimiter::RateLimiter(double requests_per_minute)
    : rate_per_second_(requests_per_minute / 60.0),
      capacity_(1.0),
      tokens_(1.0),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    std::chrono::duration<double> wait{0.0};
    {
        std::lock_guard lock(mutex_);
        const auto now = std::chrono::steady_clock::now();
        const std::chrono::duration<double> elapsed = now - last_;
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed.count() * rate_per_second_);
        tokens_ -= 1.0;
        if (tokens_ < 0.0) wait = std::chrono::duration<double>(-tokens_ / rate_per_second_);
    }
    if (wait.count() > 0.0) std::this_thread::sleep_for(wait);
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)), jitter_rng_(options_.jitter_seed) {
    if (!backend_) throw ConfigError("gateway requires a backend");
    if (options_.retry.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    for (auto tag : kAllRequestTags) usage_.per_tag[tag] = TagUsage{};
    if (options_.requests_per_minute > 0.0) limiter_ = std::make_unique<RateLimiter>(options_.requests_per_minute);
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

std::chrono::milliseconds Gateway::backoff_delay(int retry) {
    const double base = static_cast<double>(options_.retry.base_delay.count());
    const double cap = static_cast<double>(options_.retry.max_delay.count());
    const double full = std::min(cap, base * std::pow(2.0, retry));
    double jitter;
    {
        std::lock_guard lock(rng_mutex_);
        jitter = std::uniform_real_distribution<double>(0.0, 0.5)(jitter_rng_);
    }
    return std::chrono::milliseconds(static_cast<long long>(full * (0.5 + jitter)));
}

Completion Gateway::complete(const ChatRequest& request) {
    check_request(request);
    const auto start = std::chrono::steady_clock::now();
    const int max_attempts = options_.retry.max_retries + 1;

    for (int attempt = 1;; ++attempt) {
        if (limiter_) limiter_->acquire();
        BackendReply reply;
        try {
            reply = backend_->send(request);
        } catch (const TransientBackendError& e) {
            if (attempt >= max_attempts) {
                throw BackendExhausted("gave up after " + std::to_string(attempt) + " attempts: " + e.what());
            }
            options_.sleep(backoff_delay(attempt - 1));
            continue;
        }
        if (reply.text.empty()) throw BackendRefusal("backend returned empty content");

        Completion c;
        c.usage = reply.usage.value_or(TokenUsage{
            static_cast<std::int64_t>(canonical_token_count(request.system.value_or("")) +
                                      canonical_token_count(request.user)),
            static_cast<std::int64_t>(canonical_token_count(reply.text))});
        c.text = std::move(reply.text);
        c.attempt_count = attempt;
        c.latency = std::chrono::steady_clock::now() - start;
        {
            std::lock_guard lock(usage_mutex_);
            auto& u = usage_.per_tag[request.tag];
            u.calls += 1;
            u.prompt_tokens += c.usage.prompt_tokens;
            u.completion_tokens += c.usage.completion_tokens;
        }
        return c;
    }
}

UsageReport Gateway::usage_report() const {
    std::lock_guard lock(usage_mutex_);
    return usage_;
}

}  // namespace prefchain
