#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <sstream>

#include "prefchain/cli.hpp"
#include "prefchain/config.hpp"
#include "prefchain/dataset.hpp"
#include "prefchain/errors.hpp"
#include "test_support.hpp"

using namespace prefchain;
using prefchain::testing::TempDir;
using prefchain::testing::fixture;
using prefchain::testing::read_file;
using prefchain::testing::write_file;

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "prefchain");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<std::string> sorted_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    std::sort(lines.begin(), lines.end());
    return lines;
}

// Config in `dir` using the fixture scripts, with loop overrides merged in.
fs::path write_config(const TempDir& dir, const nlohmann::ordered_json& loop = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json cfg = nlohmann::ordered_json::parse(read_file(fixture("curate.json")));
    cfg["backends"]["refiner"]["script"] = fixture("refiner.json").string();
    cfg["backends"]["judge"]["script"] = fixture("judge_higher.json").string();
    for (const auto& [k, v] : loop.items()) cfg["loop"][k] = v;
    const auto path = dir / "config.json";
    write_file(path, cfg.dump(2));
    return path;
}

std::string queries(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        s += R"({"id":"k)" + std::to_string(i) + R"(","query":"Question number )" + std::to_string(i) + "?\"}\n";
    }
    return s;
}

RunConfig config_for(const TempDir& dir, const fs::path& input, const fs::path& out,
                     const nlohmann::ordered_json& loop = nlohmann::ordered_json::object()) {
    auto cfg = load_run_config(write_config(dir, loop));
    cfg.input = input;
    cfg.out = out;
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// curate

TEST(Curate, BuildsAChainPerRecord) {
    TempDir dir;
    const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto chains = read_chains(dir / "run" / "chains.jsonl");
    ASSERT_EQ(chains.size(), 5u);
    for (const auto& c : chains) {
        EXPECT_TRUE(validate_chain(c).empty()) << c.record_id;
        EXPECT_EQ(c.termination, Termination::judge_stop);
    }
    // Seeded record: q2 -> q4 -> q6, then q5 is rejected.
    EXPECT_EQ(chains[0].record_id, "q1");
    EXPECT_EQ(chains[0].answers.size(), 3u);
    EXPECT_EQ(chains[0].final_answer().text, "An even better answer. q=6");
    EXPECT_EQ(chains[0].rejected_candidate->text, "A worse answer. q=5");
    // Record without an answer starts from a zero-shot draft.
    EXPECT_EQ(chains[2].answers[0].origin, AnswerOrigin::zero_shot);
    EXPECT_EQ(chains[2].answers[1].text, "Draft refined once. q=3");
    EXPECT_EQ(chains[1].metadata.at("gold"), "National Aeronautics and Space Administration");

    const auto m = read_manifest(dir / "run" / "manifest.json");
    EXPECT_EQ(m.completed_ids.size(), 5u);
    EXPECT_EQ(m.input_digest, file_digest(fixture("queries5.jsonl")));
    EXPECT_EQ(m.run_id.rfind("run-", 0), 0u);
    EXPECT_NE(r.out.find("records: 5 processed, 5 chains completed, 0 failed"), std::string::npos);
    EXPECT_NE(r.out.find("judge_stop=5"), std::string::npos);
}

TEST(Curate, IsByteIdenticalAcrossRepeatsAndParallelism) {
    TempDir dir;
    write_file(dir / "in.jsonl", read_file(fixture("queries5.jsonl")) + queries(20));
    std::string first;
    for (const char* parallelism : {"1", "1", "4", "8"}) {
        const auto out = dir / (std::string("run-") + parallelism + "-" + std::to_string(first.size()));
        const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                            (dir / "in.jsonl").string(), "--out", out.string(), "--parallelism", parallelism});
        ASSERT_EQ(r.code, kExitOk) << r.err;
        const auto bytes = read_file(out / "chains.jsonl");
        if (first.empty()) first = bytes;
        ASSERT_EQ(bytes, first) << "parallelism " << parallelism;
    }
}

TEST(Curate, InterruptThenResumeMatchesAFullRun) {
    TempDir dir;
    write_file(dir / "in.jsonl", queries(12));
    const auto full_cfg = config_for(dir, dir / "in.jsonl", dir / "full");
    ASSERT_EQ(run_pipeline(full_cfg, ChainMode::refine_n_judge, {}, std::cout).completed, 12u);

    for (std::size_t stop_after : {0u, 1u, 5u, 11u}) {
        const auto out = dir / ("part-" + std::to_string(stop_after));
        auto cfg = config_for(dir, dir / "in.jsonl", out);
        cfg.parallelism = 3;
        std::atomic<std::size_t> polls{0};
        PipelineOptions interrupted;
        interrupted.stop = [&] { return polls++ >= stop_after; };
        std::ostringstream sink, err;
        EXPECT_EQ(cmd_curate(cfg, interrupted, sink, err), kExitInterrupted);

        const auto partial = read_manifest(out / "manifest.json");
        EXPECT_LE(partial.completed_ids.size(), stop_after);

        PipelineOptions resume;
        resume.resume = true;
        const auto summary = run_pipeline(cfg, ChainMode::refine_n_judge, resume, sink);
        EXPECT_FALSE(summary.interrupted);
        EXPECT_EQ(summary.already_done, partial.completed_ids.size());
        EXPECT_EQ(sorted_lines(read_file(out / "chains.jsonl")), sorted_lines(read_file(dir / "full" / "chains.jsonl")));
    }
}

TEST(Curate, ResumeAfterCompletionDoesNothing) {
    TempDir dir;
    const auto args = std::vector<std::string>{"curate", "--config", fixture("curate.json").string(), "--input",
                                               fixture("queries5.jsonl").string(), "--out", (dir / "run").string()};
    ASSERT_EQ(cli(args).code, kExitOk);
    const auto before = read_file(dir / "run" / "chains.jsonl");

    const auto again = cli(args);
    EXPECT_EQ(again.code, kExitConfig);
    EXPECT_NE(again.err.find("--resume"), std::string::npos);

    auto resume_args = args;
    resume_args.push_back("--resume");
    const auto resumed = cli(resume_args);
    EXPECT_EQ(resumed.code, kExitOk) << resumed.err;
    EXPECT_NE(resumed.out.find("0 processed"), std::string::npos);
    EXPECT_NE(resumed.out.find("5 already done"), std::string::npos);
    EXPECT_EQ(read_file(dir / "run" / "chains.jsonl"), before);
}

TEST(Curate, ResumeRejectsAChangedConfiguration) {
    TempDir dir;
    const std::vector<std::string> base{"curate", "--config", fixture("curate.json").string(), "--input",
                                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string()};
    ASSERT_EQ(cli(base).code, kExitOk);
    auto changed = base;
    changed.insert(changed.end(), {"--resume", "--seed", "8"});
    const auto r = cli(changed);
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_NE(r.err.find("differs"), std::string::npos);

    // Scheduling knobs may change between invocations.
    auto rescheduled = base;
    rescheduled.insert(rescheduled.end(), {"--resume", "--parallelism", "4"});
    EXPECT_EQ(cli(rescheduled).code, kExitOk);
}

TEST(Curate, ResumeRejectsAChangedInput) {
    TempDir dir;
    write_file(dir / "in.jsonl", queries(3));
    const std::vector<std::string> args{"curate", "--config", fixture("curate.json").string(), "--input",
                                        (dir / "in.jsonl").string(), "--out", (dir / "run").string()};
    ASSERT_EQ(cli(args).code, kExitOk);
    write_file(dir / "in.jsonl", queries(4));
    auto resume = args;
    resume.push_back("--resume");
    EXPECT_EQ(cli(resume).code, kExitConfig);
}

TEST(Curate, EmptyInputGivesAnEmptyStore) {
    TempDir dir;
    write_file(dir / "in.jsonl", "");
    const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input", (dir / "in.jsonl").string(),
                        "--out", (dir / "run").string()});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(read_file(dir / "run" / "chains.jsonl"), "");
    EXPECT_TRUE(read_manifest(dir / "run" / "manifest.json").completed_ids.empty());
}

TEST(Curate, MalformedLinesFailButOthersComplete) {
    TempDir dir;
    write_file(dir / "in.jsonl", queries(2) + "{broken\n" + R"({"id":"z","query":"last?"})" + "\n");
    const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input", (dir / "in.jsonl").string(),
                        "--out", (dir / "run").string()});
    EXPECT_EQ(r.code, kExitFailed);
    const auto m = read_manifest(dir / "run" / "manifest.json");
    EXPECT_EQ(m.completed_ids, (std::set<std::string>{"k0", "k1", "z"}));
    EXPECT_EQ(m.failed_ids.at("line-3"), "SchemaError");

    // A resume does not report the same line again; retry-failed does.
    const auto resumed = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                              (dir / "in.jsonl").string(), "--out", (dir / "run").string(), "--resume"});
    EXPECT_EQ(resumed.code, kExitOk);
    const auto retried = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                              (dir / "in.jsonl").string(), "--out", (dir / "run").string(), "--resume",
                              "--retry-failed"});
    EXPECT_EQ(retried.code, kExitFailed);
}

TEST(Curate, RefusedRecordsAreMarkedFailed) {
    TempDir dir;
    write_file(dir / "refiner.json", R"({"rules":[{"tag":"zero_shot","response":"draft q=1"},{"tag":"refine","response":"better q=9"},
        {"tag":"feedback","match":"Question number 1?","response":""},{"tag":"feedback","response":"fine"}]})");
    auto cfg = config_for(dir, dir / "in.jsonl", dir / "run");
    cfg.backends["refiner"].script = dir / "refiner.json";
    write_file(dir / "in.jsonl", queries(3));
    std::ostringstream out, err;
    EXPECT_EQ(cmd_curate(cfg, {}, out, err), kExitFailed);
    const auto m = read_manifest(dir / "run" / "manifest.json");
    EXPECT_EQ(m.failed_ids.at("k1"), "BackendRefusal");
    EXPECT_EQ(m.completed_ids.size(), 2u);
}

TEST(Curate, DryRunRendersPromptsWithoutCalls) {
    TempDir dir;
    const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string(), "--dry-run"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("=== feedback v1 ==="), std::string::npos);
    EXPECT_NE(r.out.find("=== refine v1 ==="), std::string::npos);
    EXPECT_NE(r.out.find("=== judge v1 ==="), std::string::npos);
    EXPECT_NE(r.out.find("watermelon"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Curate, TemplatesOverrideIsRecorded) {
    TempDir dir;
    fs::create_directories(dir / "tmpl");
    write_file(dir / "tmpl" / "judge.tmpl",
               "# template: judge v9\nCompare.\n{criteria}\n{query}\n{answer_a}\n{answer_b}\nPreferred: A, B or tie\n");
    const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string(), "--templates",
                        (dir / "tmpl").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(read_chains(dir / "run" / "chains.jsonl")[0].template_versions.at("judge"), "v9");
}

// ---------------------------------------------------------------------------
// baseline

TEST(Baseline, BestOfNCallCounts) {
    TempDir dir;
    write_file(dir / "in.jsonl", queries(3));
    const auto cfg = config_for(dir, dir / "in.jsonl", dir / "run", {{"best_of_n", 10}});
    std::ostringstream out;
    const auto s = run_pipeline(cfg, ChainMode::best_of_n, {}, out);
    EXPECT_EQ(s.completed, 3u);
    EXPECT_EQ(s.usage.of(RequestTag::zero_shot).calls, 30);
    EXPECT_EQ(s.usage.of(RequestTag::judge).calls, 3 * 2 * 9);
    EXPECT_EQ(s.usage.of(RequestTag::feedback).calls, 0);
    for (const auto& c : read_chains(dir / "run" / "chains.jsonl")) {
        EXPECT_EQ(c.mode, ChainMode::best_of_n);
        EXPECT_EQ(c.answers.size(), 1u);
    }
}

TEST(Baseline, RefinerOnlyRunsTheConfiguredSteps) {
    TempDir dir;
    write_file(dir / "in.jsonl", queries(3));
    const auto cfg = config_for(dir, dir / "in.jsonl", dir / "run", {{"refiner_steps", 10}});
    std::ostringstream out;
    const auto s = run_pipeline(cfg, ChainMode::refiner_only, {}, out);
    EXPECT_EQ(s.usage.of(RequestTag::judge).calls, 0);
    EXPECT_EQ(s.usage.of(RequestTag::refine).calls, 30);
    for (const auto& c : read_chains(dir / "run" / "chains.jsonl")) {
        EXPECT_EQ(c.answers.size(), 11u);
        EXPECT_EQ(c.termination, Termination::max_iterations);
    }
}

TEST(Baseline, ZeroShotIsOneCallPerRecord) {
    TempDir dir;
    const auto r = cli({"baseline", "--mode", "zero_shot", "--config", fixture("curate.json").string(), "--input",
                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto chains = read_chains(dir / "run" / "chains.jsonl");
    ASSERT_EQ(chains.size(), 5u);
    for (const auto& c : chains) {
        EXPECT_EQ(c.mode, ChainMode::zero_shot);
        EXPECT_EQ(c.answers[0].text, "A first draft answer. q=1");
    }
    EXPECT_NE(r.out.find("zero_shot"), std::string::npos);
}

TEST(Baseline, ModeIsValidated) {
    TempDir dir;
    const std::vector<std::string> base{"--config", fixture("curate.json").string(), "--input",
                                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string()};
    auto with_mode = [&](const std::string& mode) {
        std::vector<std::string> args{"baseline", "--mode", mode};
        args.insert(args.end(), base.begin(), base.end());
        return cli(args).code;
    };
    EXPECT_EQ(with_mode("refine_n_judge"), kExitConfig);
    EXPECT_EQ(with_mode("bogus"), kExitConfig);
    std::vector<std::string> no_mode{"baseline"};
    no_mode.insert(no_mode.end(), base.begin(), base.end());
    EXPECT_EQ(cli(no_mode).code, kExitConfig);
}

// ---------------------------------------------------------------------------
// analyze and export

class StoreFixture : public ::testing::Test {
protected:
    void SetUp() override {
        const auto r = cli({"curate", "--config", fixture("curate.json").string(), "--input",
                            fixture("queries5.jsonl").string(), "--out", (dir / "run").string()});
        ASSERT_EQ(r.code, kExitOk) << r.err;
    }
    CliResult analyze(std::vector<std::string> extra) {
        std::vector<std::string> args{"analyze", "--config", fixture("curate.json").string(), "--input",
                                      (dir / "run").string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args);
    }
    TempDir dir;
};

TEST_F(StoreFixture, Histogram) {
    const auto r = analyze({"--report", "histogram", "--out", (dir / "reports").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("total 5"), std::string::npos);
    for (const char* f : {"histogram.json", "histogram.csv", "histogram.dat"}) {
        EXPECT_TRUE(fs::exists(dir / "reports" / f)) << f;
    }
}

TEST_F(StoreFixture, WinMatrixAndConsistency) {
    auto r = analyze({"--report", "win_matrix", "--depth", "3", "--trials", "10", "--out", (dir / "reports").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("1.000"), std::string::npos);
    const auto m = nlohmann::json::parse(read_file(dir / "reports" / "win_matrix.json"));
    EXPECT_EQ(m["depth"], 3);

    r = analyze({"--report", "consistency", "--repeats", "3", "--out", (dir / "reports").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("terminal (Ans_n vs rejected): agreement 1.000"), std::string::npos);
}

TEST_F(StoreFixture, Robustness) {
    auto r = analyze({"--report", "robustness", "--metric", "length", "--out", (dir / "reports").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("mean_token_length: before"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "reports" / "robustness_mean_token_length.json"));

    // Only q2 carries a gold label.
    r = analyze({"--report", "robustness", "--metric", "accuracy"});
    EXPECT_EQ(r.code, kExitFailed);
    EXPECT_NE(r.err.find("MissingGold"), std::string::npos);

    EXPECT_EQ(analyze({"--report", "robustness", "--metric", "bleu"}).code, kExitConfig);
}

TEST_F(StoreFixture, HeadToHead) {
    ASSERT_EQ(cli({"baseline", "--mode", "zero_shot", "--config", fixture("curate.json").string(), "--input",
                   fixture("queries5.jsonl").string(), "--out", (dir / "zs").string()})
                  .code,
              kExitOk);
    const auto r = analyze({"--report", "head_to_head", "--against", (dir / "zs").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out, "A wins 100.0% | tie 0.0% | B wins 0.0% over 5 pairs\n");
    EXPECT_EQ(analyze({"--report", "head_to_head"}).code, kExitConfig);
    EXPECT_EQ(analyze({"--report", "head_to_head", "--against", (dir / "nope").string()}).code, kExitConfig);
}

TEST_F(StoreFixture, UnknownReport) { EXPECT_EQ(analyze({"--report", "vibes"}).code, kExitConfig); }

TEST_F(StoreFixture, ExportIsDeterministic) {
    auto r = cli({"export", "--input", (dir / "run").string(), "--out", (dir / "sft1").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("5 pairs exported"), std::string::npos);
    ASSERT_EQ(cli({"export", "--input", (dir / "run" / "chains.jsonl").string(), "--out", (dir / "sft2").string()}).code,
              kExitOk);
    EXPECT_EQ(read_file(dir / "sft1" / "sft.jsonl"), read_file(dir / "sft2" / "sft.jsonl"));

    const auto chains = read_chains(dir / "run" / "chains.jsonl");
    std::istringstream lines(read_file(dir / "sft1" / "sft.jsonl"));
    std::size_t i = 0;
    for (std::string line; std::getline(lines, line); ++i) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["completion"], chains[i].final_answer().text);
        EXPECT_EQ(j["chain_length"], chains[i].answers.size());
    }
    EXPECT_EQ(i, chains.size());
}

TEST(Analyze, MissingStoreIsAConfigError) {
    TempDir dir;
    EXPECT_EQ(cli({"analyze", "--report", "histogram", "--input", (dir / "nothing").string()}).code, kExitConfig);
    EXPECT_EQ(cli({"export", "--input", (dir / "nothing").string(), "--out", (dir / "x").string()}).code, kExitConfig);
}

// ---------------------------------------------------------------------------
// Command line and configuration

TEST(CommandLine, UsageErrors) {
    EXPECT_EQ(cli({"--help"}).code, kExitOk);
    EXPECT_EQ(cli({"curate", "--bogus"}).code, kExitConfig);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
    EXPECT_EQ(cli({"curate", "--config", "/nonexistent.json"}).code, kExitConfig);
    EXPECT_EQ(cli({"curate", "--config", fixture("curate.json").string()}).code, kExitConfig);  // no input
    EXPECT_EQ(cli({"curate", "--config", fixture("curate.json").string(), "--input",
                   fixture("queries5.jsonl").string(), "--out", "/tmp/x", "--parallelism", "0"})
                  .code,
              kExitConfig);
}

TEST(CommandLine, MissingBackendIsAConfigError) {
    TempDir dir;
    write_file(dir / "cfg.json", R"({"backends":{"refiner":{"kind":"scripted","script":")" +
                                     fixture("refiner.json").string() + R"("}}})");
    const auto r = cli({"curate", "--config", (dir / "cfg.json").string(), "--input",
                        fixture("queries5.jsonl").string(), "--out", (dir / "run").string()});
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_NE(r.err.find("judge"), std::string::npos);
    // Baselines without judging do not need it.
    EXPECT_EQ(cli({"baseline", "--mode", "refiner_only", "--config", (dir / "cfg.json").string(), "--input",
                   fixture("queries5.jsonl").string(), "--out", (dir / "run2").string()})
                  .code,
              kExitOk);
}

TEST(Config, ParsesEveryField) {
    const auto j = nlohmann::ordered_json::parse(R"({
        "loop": {"max_refinements": 4, "refine_temperature": 0.5, "judge_temperature": 0.2, "mode": "best_of_n",
                 "best_of_n": 3, "best_of_n_selector": "single_prompt", "refiner_steps": 2, "max_resamples": 1},
        "judge": {"length_penalty_per_token": 0.01, "disagreement_policy": "rejudge_once_then_incumbent",
                  "voters": ["judge", "judge2"], "debias": false},
        "backends": {"refiner": {"kind": "scripted", "script": "r.json"},
                     "judge": {"kind": "http", "base_url": "https://api.example.com", "model": "m"},
                     "judge2": {"kind": "http", "base_url": "http://localhost:8080", "api_key_env": "MY_KEY",
                                "headers": {"X-Org": "o"}, "timeout_s": 9}},
        "criteria": ["accuracy", {"name": "tone", "description": "polite"}],
        "templates": "tmpl", "input": "in.jsonl", "out": "/abs/run",
        "parallelism": 3, "seed": 11, "checkpoint_every": 5,
        "retry": {"max_retries": 2, "base_delay_ms": 10, "max_delay_ms": 20},
        "rate_limit_rpm": 120})");
    const auto cfg = parse_run_config(j, "/base");
    EXPECT_EQ(cfg.loop.max_refinements, 4u);
    EXPECT_EQ(cfg.loop.mode, LoopMode::best_of_n);
    EXPECT_EQ(cfg.loop.best_of_n_selector, BestOfNSelector::single_prompt);
    EXPECT_EQ(cfg.loop.max_resamples, 1u);
    EXPECT_DOUBLE_EQ(cfg.loop.judge.temperature, 0.2);
    EXPECT_EQ(cfg.loop.judge.disagreement_policy, DisagreementPolicy::rejudge_once_then_incumbent);
    EXPECT_FALSE(cfg.loop.judge.debias);
    EXPECT_EQ(cfg.backends.at("refiner").script, fs::path("/base/r.json"));
    EXPECT_EQ(cfg.backends.at("judge").http.api_key_env, "JUDGE_API_KEY");
    EXPECT_EQ(cfg.backends.at("judge2").http.api_key_env, "MY_KEY");
    EXPECT_EQ(cfg.backends.at("judge2").http.timeout, std::chrono::seconds(9));
    ASSERT_TRUE(cfg.criteria.has_value());
    EXPECT_EQ((*cfg.criteria)[0].description, CriteriaSet::defaults().items()[0].description);
    EXPECT_EQ((*cfg.criteria)[1], (Criterion{"tone", "polite"}));
    EXPECT_EQ(cfg.templates, fs::path("/base/tmpl"));
    EXPECT_EQ(cfg.input, fs::path("/base/in.jsonl"));
    EXPECT_EQ(cfg.out, fs::path("/abs/run"));
    EXPECT_EQ(cfg.retry.base_delay, std::chrono::milliseconds(10));
    EXPECT_DOUBLE_EQ(cfg.rate_limit_rpm, 120.0);

    // Round trip through the snapshot form.
    EXPECT_EQ(to_json(parse_run_config(to_json(cfg))), to_json(cfg));
}

TEST(Config, RejectsBadInput) {
    for (const char* bad : {R"({"bogus": 1})", R"({"loop": {"max_refinements": 0}})", R"({"loop": {"speed": 1}})",
                            R"({"loop": {"mode": "fast"}})", R"({"judge": {"length_penalty_per_token": 2}})",
                            R"({"judge": {"voters": []}})", R"({"backends": {"x": {"kind": "ftp"}}})",
                            R"({"backends": {"x": {"kind": "scripted"}}})", R"({"criteria": ["a", "A"]})",
                            R"({"criteria": [3]})", R"({"parallelism": 0})", R"({"seed": "seven"})",
                            R"({"retry": {"max_retries": -1}})", R"([])"}) {
        EXPECT_THROW(parse_run_config(nlohmann::ordered_json::parse(bad)), ConfigError) << bad;
    }
}

TEST(Config, EnvironmentOverridesEndpoint) {
    auto cfg = parse_run_config(nlohmann::ordered_json::parse(
        R"({"backends": {"judge": {"kind": "http", "model": "m"}, "refiner": {"kind": "http", "base_url": "http://a"}}})"));
    ::setenv("JUDGE_BASE_URL", "http://override:1", 1);
    apply_env_overrides(cfg);
    ::unsetenv("JUDGE_BASE_URL");
    EXPECT_EQ(cfg.backends.at("judge").http.base_url, "http://override:1");
    EXPECT_EQ(cfg.backends.at("refiner").http.base_url, "http://a");
}

TEST(Config, ComparableSnapshotIgnoresSchedulingKnobs) {
    TempDir dir;
    auto a = config_for(dir, dir / "in.jsonl", dir / "a");
    auto b = a;
    b.parallelism = 9;
    b.out = dir / "b";
    b.retry.max_retries = 0;
    b.checkpoint_every = 1;
    EXPECT_EQ(comparable_snapshot(to_json(a)), comparable_snapshot(to_json(b)));
    b.seed = 99;
    EXPECT_NE(comparable_snapshot(to_json(a)), comparable_snapshot(to_json(b)));
    b = a;
    b.loop.max_refinements = 3;
    EXPECT_NE(comparable_snapshot(to_json(a)), comparable_snapshot(to_json(b)));
}

TEST(Factory, ScriptedGatewaysArePerKeyAndReproducible) {
    TempDir dir;
    write_file(dir / "coin.json", R"({"seed": 3, "rules": [{"tag": "judge", "coin_flip": true}]})");
    auto cfg = config_for(dir, dir / "in.jsonl", dir / "run");
    cfg.backends["judge"].script = dir / "coin.json";
    BackendFactory f1(cfg), f2(cfg);
    auto draw = [](BackendFactory& f, const std::string& key) {
        auto gw = f.gateway("judge", key);
        std::string s;
        ChatRequest req;
        req.user = "x";
        req.tag = RequestTag::judge;
        for (int i = 0; i < 16; ++i) s += gw->complete(req).text.substr(11, 1);
        return s;
    };
    EXPECT_EQ(draw(f1, "r1"), draw(f2, "r1"));
    EXPECT_NE(draw(f1, "r1"), draw(f1, "r2"));
    EXPECT_FALSE(f1.is_shared("judge"));
    EXPECT_THROW(f1.gateway("missing", "r1"), ConfigError);

    cfg.backends["judge"].script = dir / "missing.json";
    EXPECT_THROW(BackendFactory{cfg}, ConfigError);
}
