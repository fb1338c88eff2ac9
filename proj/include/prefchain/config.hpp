#pragma once

// Run configuration: one JSON file, overridable from the command line, and
// the factory that turns its backend entries into gateways.
//
//   {
//     "loop":     {"max_refinements": 10, "refine_temperature": 0.7, "judge_temperature": 0, ...},
//     "judge":    {"length_penalty_per_token": 0, "disagreement_policy": "incumbent_wins",
//                  "voters": ["judge"], "debias": true},
//     "backends": {"refiner": {"kind": "scripted", "script": "refiner.json"},
//                  "judge":   {"kind": "http", "base_url": "https://...", "model": "...",
//                              "api_key_env": "JUDGE_API_KEY"}},
//     "criteria": ["accuracy", {"name": "tone", "description": "..."}],
//     "templates": "templates/", "input": "queries.jsonl", "out": "run/",
//     "parallelism": 4, "seed": 7, "checkpoint_every": 64,
//     "retry": {"max_retries": 5, "base_delay_ms": 1000, "max_delay_ms": 60000},
//     "rate_limit_rpm": 0
//   }
//
// Relative paths inside the file resolve against the file's directory. API
// keys are never read from the file, only from the environment variable the
// backend entry names.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefchain/backend.hpp"
#include "prefchain/judge.hpp"
#include "prefchain/loop.hpp"
#include "prefchain/prompts.hpp"

namespace prefchain {

struct BackendSpec {
    enum class Kind { scripted, http };
    Kind kind = Kind::scripted;
    std::filesystem::path script;  // scripted
    HttpEndpoint http;             // http

    bool operator==(const BackendSpec&) const;
};

struct RunConfig {
    LoopConfig loop;
    std::map<std::string, BackendSpec> backends;
    std::optional<std::vector<Criterion>> criteria;  // defaults when absent
    std::optional<std::filesystem::path> templates;  // built-in templates when absent
    std::filesystem::path input;
    std::filesystem::path out;
    std::size_t parallelism = 1;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 64;
    RetryPolicy retry;
    double rate_limit_rpm = 0.0;
};

// Throws ConfigError with the offending key in the message.
RunConfig parse_run_config(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Full serialization; contains endpoint URLs and key variable names but no
// secrets.
nlohmann::ordered_json to_json(const RunConfig& cfg);

// The subset of a snapshot that must match when resuming: drops fields that
// only affect scheduling or locations (parallelism, paths, retry, rate limit).
nlohmann::ordered_json comparable_snapshot(const nlohmann::ordered_json& snapshot);

// Environment overrides for endpoint URLs: REFINER_BASE_URL, JUDGE_BASE_URL,
// and <NAME>_BASE_URL for any other backend entry.
void apply_env_overrides(RunConfig& cfg);

CriteriaSet criteria_of(const RunConfig& cfg);
TemplateSet templates_of(const RunConfig& cfg);

// Builds gateways for the backend entries of a config.
//
// Scripted backends are instantiated per work item with a seed derived from
// the run seed and the item key, so a record's chain does not depend on which
// other records ran before it or on thread scheduling. HTTP backends are
// shared across items so their rate limit applies to the whole run.
class BackendFactory {
public:
    explicit BackendFactory(const RunConfig& cfg);

    // Gateway for backend `name` serving work item `key`.
    std::shared_ptr<Gateway> gateway(const std::string& name, const std::string& key);
    bool is_shared(const std::string& name) const;

    // Usage of the shared gateways created so far.
    UsageReport shared_usage() const;

    std::shared_ptr<const PairwiseJudge> judge(const std::string& key,
                                               std::vector<std::shared_ptr<Gateway>>* created = nullptr);
    // Refine loop for `key`; the judge is built only when `with_judge` is set.
    RefineLoop loop(const std::string& key, bool with_judge,
                    std::vector<std::shared_ptr<Gateway>>* created = nullptr);

private:
    const BackendSpec& spec(const std::string& name) const;
    GatewayOptions options(const std::string& key) const;

    RunConfig cfg_;
    CriteriaSet criteria_;
    TemplateSet templates_;
    std::map<std::string, Script> scripts_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Gateway>> shared_;
};

// 64-bit FNV-1a; stable across platforms.
std::uint64_t stable_hash(std::string_view s);

}  // namespace prefchain
