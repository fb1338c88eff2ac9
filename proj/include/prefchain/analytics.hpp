#pragma once

// Measurements over curated chains: chain-length histograms, pairwise win
// matrices across refinement depth, judge self-consistency, robustness deltas
// between two answer sets, and head-to-head comparisons of two stores.
//
// Every routine that samples takes an explicit seed; with a deterministic
// judge and parallelism 1 the result depends only on the inputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prefchain/chain.hpp"
#include "prefchain/judge.hpp"

namespace prefchain {

// ---------------------------------------------------------------------------
// Histogram

using Histogram = std::map<std::size_t, std::size_t>;  // answer count -> chains

Histogram chain_length_histogram(const std::vector<PreferenceChain>& chains);
// Streams the store file; memory does not grow with the store.
Histogram chain_length_histogram(const std::filesystem::path& store);

// ---------------------------------------------------------------------------
// Win matrix

struct WinCell {
    // Positional judge calls in which each answer was preferred. Row answer
    // is Ans_i, column answer is Ans_j.
    std::size_t row_wins = 0;
    std::size_t col_wins = 0;
    std::size_t ties = 0;
    // judge_pair invocations behind the votes.
    std::size_t trials = 0;
    // Win fraction of Ans_j over Ans_i on the no-tie subset; absent without data.
    std::optional<double> fraction;

    std::size_t decisive() const { return row_wins + col_wins; }
};

struct WinMatrix {
    std::size_t depth = 0;
    // cells[i][j]; the diagonal holds 0.5 by convention.
    std::vector<std::vector<WinCell>> cells;

    std::optional<double> at(std::size_t i, std::size_t j) const { return cells.at(i).at(j).fraction; }
};

struct WinMatrixOptions {
    std::size_t depth = 6;  // covers Ans_0 .. Ans_{depth-1}
    std::size_t trials_per_cell = 100;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
};

// For each i < j < depth, runs trials_per_cell judge_pair calls on randomly
// drawn chains that contain Ans_j, with Ans_i as incumbent, Ans_j as
// candidate and a random arrangement order. Every positional call is one vote.
// Cells (j, i) mirror (i, j) from the same votes. Cells without eligible
// chains stay absent; throws InsufficientData when no cell has any.
WinMatrix build_win_matrix(const std::vector<PreferenceChain>& chains, const PairwiseJudge& judge,
                           const WinMatrixOptions& options);

// ---------------------------------------------------------------------------
// Consistency

struct AgreementStats {
    std::size_t pairs = 0;
    std::size_t judgments = 0;  // repeats x pairs
    std::size_t agree = 0;
    std::size_t disagree = 0;
    std::size_t ties = 0;

    // Ties count as disagreement.
    std::optional<double> agreement() const;
    // Ties left out of the denominator.
    std::optional<double> agreement_excluding_ties() const;
};

struct ConsistencyReport {
    std::size_t repeats = 0;
    // Depth t holds the pairs (Ans_t, Ans_{t+1}); agreement = preferring Ans_{t+1}.
    std::map<std::size_t, AgreementStats> per_depth;
    // Pairs (Ans_n, rejected candidate); agreement = preferring Ans_n.
    AgreementStats terminal;
};

struct ConsistencyOptions {
    std::size_t repeats = 10;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
};

// Re-judges every adjacent accepted pair and every terminal pair `repeats`
// times with a single comparison per repeat and random slot order.
ConsistencyReport consistency_experiment(const std::vector<PreferenceChain>& chains, const PairwiseJudge& judge,
                                         const ConsistencyOptions& options);

// ---------------------------------------------------------------------------
// Robustness

enum class RobustnessMetric { binary_accuracy, mean_token_length, mean_judge_score };

std::string_view to_string(RobustnessMetric m);
std::optional<RobustnessMetric> parse_robustness_metric(std::string_view s);

// How an answer is matched against its gold label for binary accuracy.
enum class GoldMatch {
    exact,     // equal after trimming, case-insensitive
    contains,  // gold occurs in the answer as a whole word run, case-insensitive
};

struct AnswerSample {
    std::string id;
    std::string query;
    std::string text;
    std::optional<std::string> gold;
};

// answers[0] of every chain, with the gold label from metadata["gold"].
std::vector<AnswerSample> initial_answers(const std::vector<PreferenceChain>& chains);
// The final accepted answer of every chain.
std::vector<AnswerSample> final_answers(const std::vector<PreferenceChain>& chains);

struct RecordMetric {
    std::string id;
    double before = 0.0;
    double after = 0.0;
};

struct RobustnessResult {
    RobustnessMetric metric = RobustnessMetric::mean_token_length;
    double before = 0.0;  // accuracy in percent
    double after = 0.0;
    // Percent change for length and score, percentage points for accuracy.
    // Absent when the relative change is undefined (before == 0).
    std::optional<double> delta;
    std::size_t matched = 0;
    std::size_t unmatched = 0;
    std::vector<RecordMetric> per_record;
};

bool gold_matches(std::string_view answer, std::string_view gold, GoldMatch match);

// Aligns the two sets by record id; ids present in only one set are counted
// as unmatched. mean_judge_score needs `judge`. Throws MissingGold,
// InsufficientData (no shared ids) or ConfigError.
RobustnessResult robustness_delta(const std::vector<AnswerSample>& before, const std::vector<AnswerSample>& after,
                                  RobustnessMetric metric, const PairwiseJudge* judge = nullptr,
                                  GoldMatch match = GoldMatch::exact);

// ---------------------------------------------------------------------------
// Head to head

struct HeadToHeadReport {
    std::size_t pairs = 0;
    std::size_t a_wins = 0;
    std::size_t b_wins = 0;
    std::size_t ties = 0;
    std::size_t unmatched = 0;

    double a_win_percent() const;
    double b_win_percent() const;
    double tie_percent() const;
};

// Judges the final answers of records present in both sets, debiased, with a
// random arrangement order per pair.
HeadToHeadReport head_to_head(const std::vector<PreferenceChain>& a, const std::vector<PreferenceChain>& b,
                              const PairwiseJudge& judge, std::uint64_t seed = 0, std::size_t parallelism = 1);

// ---------------------------------------------------------------------------
// Report files

nlohmann::ordered_json to_json(const Histogram& h);
nlohmann::ordered_json to_json(const WinMatrix& m);
nlohmann::ordered_json to_json(const ConsistencyReport& r);
nlohmann::ordered_json to_json(const RobustnessResult& r);
nlohmann::ordered_json to_json(const HeadToHeadReport& r);

std::string to_csv(const Histogram& h);
std::string to_csv(const WinMatrix& m);
std::string to_csv(const ConsistencyReport& r);
std::string to_csv(const RobustnessResult& r);
std::string to_csv(const HeadToHeadReport& r);

// Whitespace-separated tables for gnuplot.
std::string to_gnuplot(const Histogram& h);
std::string to_gnuplot(const WinMatrix& m);  // matrix form, "nan" for absent cells
std::string to_gnuplot(const ConsistencyReport& r);

// Writes <stem>.json, <stem>.csv and, when given, <stem>.dat into `dir`.
void write_report_files(const std::filesystem::path& dir, std::string_view stem, const nlohmann::ordered_json& json,
                        const std::string& csv, const std::optional<std::string>& gnuplot = std::nullopt);

}  // namespace prefchain
