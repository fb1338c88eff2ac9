#include "prefchain/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>

#include "prefchain/errors.hpp"

namespace prefchain {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& j, const std::string& where, const std::set<std::string>& known) {
    for (const auto& [key, value] : j.items()) {
        if (known.count(key) == 0) throw ConfigError("unknown key '" + where + key + "'");
    }
}

template <typename T>
T get(const ordered_json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("'" + where + key + "' has the wrong type");
    }
}

template <typename T>
void maybe(const ordered_json& j, const char* key, const std::string& where, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = get<T>(j, key, where);
}

std::size_t non_negative(const ordered_json& j, const char* key, const std::string& where, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto v = get<std::int64_t>(j, key, where);
    if (v < 0) throw ConfigError("'" + where + key + "' must not be negative");
    return static_cast<std::size_t>(v);
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

const ordered_json& object_at(const ordered_json& j, const char* key) {
    if (!j[key].is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
    return j[key];
}

BackendSpec parse_backend(const std::string& name, const ordered_json& j, const fs::path& base) {
    const std::string where = "backends." + name + ".";
    if (!j.is_object()) throw ConfigError("'backends." + name + "' must be an object");
    BackendSpec spec;
    const auto kind = j.value("kind", std::string("scripted"));
    if (kind == "scripted") {
        reject_unknown(j, where, {"kind", "script"});
        if (!j.contains("script")) throw ConfigError("'" + where + "script' is required");
        spec.kind = BackendSpec::Kind::scripted;
        spec.script = resolve(base, get<std::string>(j, "script", where));
    } else if (kind == "http") {
        reject_unknown(j, where,
                       {"kind", "base_url", "path", "model", "api_key_env", "auth_header", "auth_prefix", "headers",
                        "timeout_s"});
        spec.kind = BackendSpec::Kind::http;
        auto& h = spec.http;
        maybe(j, "base_url", where, h.base_url);
        maybe(j, "path", where, h.path);
        maybe(j, "model", where, h.model);
        maybe(j, "api_key_env", where, h.api_key_env);
        maybe(j, "auth_header", where, h.auth_header);
        maybe(j, "auth_prefix", where, h.auth_prefix);
        maybe(j, "headers", where, h.extra_headers);
        if (j.contains("timeout_s")) h.timeout = std::chrono::seconds(get<std::int64_t>(j, "timeout_s", where));
        if (h.api_key_env.empty()) {
            for (char c : name) h.api_key_env.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            h.api_key_env += "_API_KEY";
        }
    } else {
        throw ConfigError("'" + where + "kind' must be scripted or http, got '" + kind + "'");
    }
    return spec;
}

ordered_json backend_json(const BackendSpec& spec) {
    ordered_json j;
    if (spec.kind == BackendSpec::Kind::scripted) {
        j["kind"] = "scripted";
        j["script"] = spec.script.string();
        return j;
    }
    const auto& h = spec.http;
    j["kind"] = "http";
    j["base_url"] = h.base_url;
    j["path"] = h.path;
    j["model"] = h.model;
    j["api_key_env"] = h.api_key_env;
    j["auth_header"] = h.auth_header;
    j["auth_prefix"] = h.auth_prefix;
    j["headers"] = h.extra_headers;
    j["timeout_s"] = h.timeout.count();
    return j;
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

bool BackendSpec::operator==(const BackendSpec& o) const { return backend_json(*this) == backend_json(o); }

std::uint64_t stable_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RunConfig parse_run_config(const ordered_json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, "",
                   {"loop", "judge", "backends", "criteria", "templates", "input", "out", "parallelism", "seed",
                    "checkpoint_every", "retry", "rate_limit_rpm"});
    RunConfig cfg;

    if (j.contains("loop")) {
        const auto& l = object_at(j, "loop");
        const std::string w = "loop.";
        reject_unknown(l, w,
                       {"max_refinements", "refine_temperature", "judge_temperature", "max_output_tokens", "mode",
                        "best_of_n", "best_of_n_selector", "refiner_steps", "max_resamples"});
        auto& lc = cfg.loop;
        lc.max_refinements = non_negative(l, "max_refinements", w, lc.max_refinements);
        maybe(l, "refine_temperature", w, lc.refine_temperature);
        maybe(l, "judge_temperature", w, lc.judge_temperature);
        maybe(l, "max_output_tokens", w, lc.max_output_tokens);
        if (l.contains("mode")) {
            const auto m = parse_loop_mode(get<std::string>(l, "mode", w));
            if (!m) throw ConfigError("'loop.mode' must be refine_n_judge, refiner_only or best_of_n");
            lc.mode = *m;
        }
        lc.best_of_n = non_negative(l, "best_of_n", w, lc.best_of_n);
        if (l.contains("best_of_n_selector")) {
            const auto s = get<std::string>(l, "best_of_n_selector", w);
            if (s == "pairwise") lc.best_of_n_selector = BestOfNSelector::pairwise;
            else if (s == "single_prompt") lc.best_of_n_selector = BestOfNSelector::single_prompt;
            else throw ConfigError("'loop.best_of_n_selector' must be pairwise or single_prompt");
        }
        lc.refiner_steps = non_negative(l, "refiner_steps", w, lc.refiner_steps);
        lc.max_resamples = non_negative(l, "max_resamples", w, lc.max_resamples);
    }

    if (j.contains("judge")) {
        const auto& jj = object_at(j, "judge");
        const std::string w = "judge.";
        reject_unknown(jj, w, {"length_penalty_per_token", "disagreement_policy", "voters", "debias", "max_output_tokens"});
        auto& jc = cfg.loop.judge;
        maybe(jj, "length_penalty_per_token", w, jc.length_penalty_per_token);
        if (jj.contains("disagreement_policy")) {
            const auto p = parse_disagreement_policy(get<std::string>(jj, "disagreement_policy", w));
            if (!p) throw ConfigError("'judge.disagreement_policy' must be incumbent_wins or rejudge_once_then_incumbent");
            jc.disagreement_policy = *p;
        }
        maybe(jj, "voters", w, jc.voters);
        maybe(jj, "debias", w, jc.debias);
        maybe(jj, "max_output_tokens", w, jc.max_output_tokens);
    }
    cfg.loop.judge.temperature = cfg.loop.judge_temperature;

    if (j.contains("backends")) {
        for (const auto& [name, spec] : object_at(j, "backends").items()) {
            cfg.backends[name] = parse_backend(name, spec, base);
        }
    }

    if (j.contains("criteria") && !j["criteria"].is_null()) {
        if (!j["criteria"].is_array()) throw ConfigError("'criteria' must be an array");
        std::vector<Criterion> items;
        for (const auto& c : j["criteria"]) {
            if (c.is_string()) {
                items.push_back({c.get<std::string>(), ""});
            } else if (c.is_object() && c.contains("name")) {
                items.push_back({c["name"].get<std::string>(), c.value("description", std::string())});
            } else {
                throw ConfigError("criteria entries must be strings or {name, description} objects");
            }
        }
        // Fill in descriptions of known criteria left blank.
        const auto defaults = CriteriaSet::defaults();
        for (auto& item : items) {
            if (!item.description.empty()) continue;
            for (const auto& d : defaults.items()) {
                if (d.name == item.name) item.description = d.description;
            }
        }
        try {
            CriteriaSet check(items);
            cfg.criteria = check.items();
        } catch (const InvalidCriteria& e) {
            throw ConfigError(std::string("criteria: ") + e.what());
        }
    }

    if (j.contains("templates") && !j["templates"].is_null()) {
        cfg.templates = resolve(base, get<std::string>(j, "templates", ""));
    }
    if (j.contains("input")) cfg.input = resolve(base, get<std::string>(j, "input", ""));
    if (j.contains("out")) cfg.out = resolve(base, get<std::string>(j, "out", ""));
    cfg.parallelism = non_negative(j, "parallelism", "", cfg.parallelism);
    if (j.contains("seed")) cfg.seed = get<std::uint64_t>(j, "seed", "");
    cfg.checkpoint_every = non_negative(j, "checkpoint_every", "", cfg.checkpoint_every);
    maybe(j, "rate_limit_rpm", "", cfg.rate_limit_rpm);

    if (j.contains("retry")) {
        const auto& r = object_at(j, "retry");
        const std::string w = "retry.";
        reject_unknown(r, w, {"max_retries", "base_delay_ms", "max_delay_ms"});
        maybe(r, "max_retries", w, cfg.retry.max_retries);
        if (r.contains("base_delay_ms")) {
            cfg.retry.base_delay = std::chrono::milliseconds(get<std::int64_t>(r, "base_delay_ms", w));
        }
        if (r.contains("max_delay_ms")) {
            cfg.retry.max_delay = std::chrono::milliseconds(get<std::int64_t>(r, "max_delay_ms", w));
        }
    }

    if (cfg.parallelism < 1) throw ConfigError("'parallelism' must be >= 1");
    if (cfg.checkpoint_every < 1) throw ConfigError("'checkpoint_every' must be >= 1");
    if (cfg.rate_limit_rpm < 0) throw ConfigError("'rate_limit_rpm' must not be negative");
    if (cfg.retry.max_retries < 0) throw ConfigError("'retry.max_retries' must not be negative");
    check_loop_config(cfg.loop);
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

ordered_json to_json(const RunConfig& cfg) {
    ordered_json j;
    const auto& l = cfg.loop;
    j["loop"] = ordered_json{{"max_refinements", l.max_refinements},
                             {"refine_temperature", l.refine_temperature},
                             {"judge_temperature", l.judge_temperature},
                             {"max_output_tokens", l.max_output_tokens},
                             {"mode", std::string(to_string(l.mode))},
                             {"best_of_n", l.best_of_n},
                             {"best_of_n_selector",
                              std::string(l.best_of_n_selector == BestOfNSelector::pairwise ? "pairwise" : "single_prompt")},
                             {"refiner_steps", l.refiner_steps},
                             {"max_resamples", l.max_resamples}};
    const auto& jc = l.judge;
    j["judge"] = ordered_json{{"length_penalty_per_token", jc.length_penalty_per_token},
                              {"disagreement_policy", std::string(to_string(jc.disagreement_policy))},
                              {"voters", jc.voters},
                              {"debias", jc.debias},
                              {"max_output_tokens", jc.max_output_tokens}};
    auto backends = ordered_json::object();
    for (const auto& [name, spec] : cfg.backends) backends[name] = backend_json(spec);
    j["backends"] = std::move(backends);
    auto criteria = ordered_json::array();
    const CriteriaSet criteria_set = criteria_of(cfg);
    for (const auto& c : criteria_set.items()) {
        criteria.push_back(ordered_json{{"name", c.name}, {"description", c.description}});
    }
    j["criteria"] = std::move(criteria);
    j["templates"] = cfg.templates ? ordered_json(cfg.templates->string()) : ordered_json(nullptr);
    j["input"] = cfg.input.string();
    j["out"] = cfg.out.string();
    j["parallelism"] = cfg.parallelism;
    j["seed"] = cfg.seed;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["retry"] = ordered_json{{"max_retries", cfg.retry.max_retries},
                              {"base_delay_ms", cfg.retry.base_delay.count()},
                              {"max_delay_ms", cfg.retry.max_delay.count()}};
    j["rate_limit_rpm"] = cfg.rate_limit_rpm;
    return j;
}

ordered_json comparable_snapshot(const ordered_json& snapshot) {
    ordered_json j = snapshot;
    if (!j.is_object()) return j;
    for (const char* key : {"parallelism", "input", "out", "templates", "retry", "rate_limit_rpm", "checkpoint_every"}) {
        j.erase(key);
    }
    if (j.contains("backends") && j["backends"].is_object()) {
        for (auto& [name, spec] : j["backends"].items()) {
            spec.erase("script");
            spec.erase("timeout_s");
        }
    }
    return j;
}

void apply_env_overrides(RunConfig& cfg) {
    for (auto& [name, spec] : cfg.backends) {
        if (spec.kind != BackendSpec::Kind::http) continue;
        const std::string var = upper(name) + "_BASE_URL";
        if (const char* v = std::getenv(var.c_str()); v != nullptr && *v != '\0') spec.http.base_url = v;
    }
}

CriteriaSet criteria_of(const RunConfig& cfg) {
    return cfg.criteria ? CriteriaSet(*cfg.criteria) : CriteriaSet::defaults();
}

TemplateSet templates_of(const RunConfig& cfg) {
    return cfg.templates ? TemplateSet::load_dir(*cfg.templates) : TemplateSet{};
}

// ---------------------------------------------------------------------------
// BackendFactory

BackendFactory::BackendFactory(const RunConfig& cfg)
    : cfg_(cfg), criteria_(criteria_of(cfg)), templates_(templates_of(cfg)) {
    for (const auto& [name, spec] : cfg_.backends) {
        if (spec.kind != BackendSpec::Kind::scripted) continue;
        try {
            scripts_[name] = load_script(spec.script);
        } catch (const Error& e) {
            throw ConfigError("backend '" + name + "': " + e.what());
        }
    }
}

const BackendSpec& BackendFactory::spec(const std::string& name) const {
    auto it = cfg_.backends.find(name);
    if (it == cfg_.backends.end()) throw ConfigError("no backend named '" + name + "' is configured");
    return it->second;
}

bool BackendFactory::is_shared(const std::string& name) const {
    return spec(name).kind == BackendSpec::Kind::http;
}

GatewayOptions BackendFactory::options(const std::string& key) const {
    GatewayOptions o;
    o.retry = cfg_.retry;
    o.requests_per_minute = cfg_.rate_limit_rpm;
    o.jitter_seed = splitmix(cfg_.seed ^ stable_hash(key));
    return o;
}

std::shared_ptr<Gateway> BackendFactory::gateway(const std::string& name, const std::string& key) {
    const auto& s = spec(name);
    if (s.kind == BackendSpec::Kind::http) {
        std::lock_guard lock(mutex_);
        auto& slot = shared_[name];
        if (!slot) slot = std::make_shared<Gateway>(std::make_shared<HttpBackend>(s.http), options(name));
        return slot;
    }
    Script script = scripts_.at(name);
    script.seed = splitmix(script.seed ^ splitmix(cfg_.seed ^ stable_hash(name + '\x1f' + key)));
    return std::make_shared<Gateway>(std::make_shared<ScriptedBackend>(std::move(script)), options(key));
}

UsageReport BackendFactory::shared_usage() const {
    std::lock_guard lock(mutex_);
    UsageReport total;
    for (const auto& [name, gw] : shared_) total += gw->usage_report();
    return total;
}

std::shared_ptr<const PairwiseJudge> BackendFactory::judge(const std::string& key,
                                                           std::vector<std::shared_ptr<Gateway>>* created) {
    std::vector<std::shared_ptr<Gateway>> voters;
    for (const auto& name : cfg_.loop.judge.voters) {
        auto gw = gateway(name, key);
        if (created && !is_shared(name)) created->push_back(gw);
        voters.push_back(std::move(gw));
    }
    return std::make_shared<const PairwiseJudge>(std::move(voters), cfg_.loop.judge, templates_, criteria_);
}

RefineLoop BackendFactory::loop(const std::string& key, bool with_judge,
                                std::vector<std::shared_ptr<Gateway>>* created) {
    auto refiner = gateway("refiner", key);
    if (created && !is_shared("refiner")) created->push_back(refiner);
    std::shared_ptr<const PairwiseJudge> j;
    if (with_judge) j = judge(key, created);
    return RefineLoop(std::move(refiner), std::move(j), cfg_.loop, templates_, criteria_);
}

}  // namespace prefchain
