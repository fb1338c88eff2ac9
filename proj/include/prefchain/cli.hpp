#pragma once

// Command-line entry points: curate, baseline, analyze, export.
//
// Exit codes: 0 success, 1 some record failed, 2 configuration error or
// missing store, 130 interrupted (the store and manifest stay consistent and
// the run can be resumed).

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prefchain/backend.hpp"
#include "prefchain/chain.hpp"
#include "prefchain/config.hpp"
#include "prefchain/dataset.hpp"

namespace prefchain {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInterrupted = 130;

struct PipelineOptions {
    bool resume = false;
    bool retry_failed = false;
    bool dry_run = false;
    // Polled between records; once true no new record starts and in-flight
    // records finish and are committed.
    std::function<bool()> stop;
};

struct RunSummary {
    std::size_t attempted = 0;
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::size_t already_done = 0;  // completed by an earlier invocation
    std::map<Termination, std::size_t> terminations;
    UsageReport usage;
    std::vector<ParseErrorEvent> parse_errors;
    bool interrupted = false;
};

// Runs `mode` over the pending records of cfg.input into the store at cfg.out.
// Results are committed in input order, so the store bytes do not depend on
// parallelism. Throws ConfigError, DigestMismatch, DuplicateId, UnreadableFile.
RunSummary run_pipeline(const RunConfig& cfg, ChainMode mode, const PipelineOptions& options, std::ostream& out);

// Renders every prompt of the first input record without calling a backend.
void render_dry_run(const RunConfig& cfg, ChainMode mode, std::ostream& out);

void print_summary(const RunSummary& s, std::ostream& out);

int cmd_curate(const RunConfig& cfg, const PipelineOptions& options, std::ostream& out, std::ostream& err);
int cmd_baseline(const RunConfig& cfg, ChainMode mode, const PipelineOptions& options, std::ostream& out,
                 std::ostream& err);

struct AnalyzeOptions {
    std::string report;  // histogram, win_matrix, consistency, robustness, head_to_head
    std::filesystem::path store;
    std::optional<std::filesystem::path> against;
    std::optional<std::filesystem::path> out;
    std::size_t depth = 6;
    std::size_t trials = 100;
    std::size_t repeats = 10;
    std::string metric = "mean_token_length";
    std::string gold_match = "exact";
};

int cmd_analyze(const RunConfig& cfg, const AnalyzeOptions& options, std::ostream& out, std::ostream& err);

// Exports <store>/chains.jsonl to <out_dir>/sft.jsonl.
int cmd_export(const std::filesystem::path& store, const std::filesystem::path& out_dir, std::ostream& out,
               std::ostream& err);

// Resolves a run directory or a chains.jsonl path to the store file.
std::optional<std::filesystem::path> resolve_store(const std::filesystem::path& p);

// Full command line, including argv[0]. Installs a SIGINT handler that
// requests a graceful drain.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prefchain
