#pragma once

// Domain vocabulary shared by every stage of the pipeline: query records,
// answers, judge verdicts, and the preference chains built from them.
//
// All types here are plain value objects. Once a chain has been assembled it
// is never mutated, so chains can be handed between worker threads freely.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prefchain {

constexpr std::size_t kDefaultMaxRefinements = 10;

using Metadata = std::map<std::string, std::string>;

struct QueryRecord {
    std::string id;
    std::string query;
    std::optional<std::string> initial_answer;
    Metadata metadata;

    bool operator==(const QueryRecord&) const = default;
};

enum class AnswerOrigin { seed, refined, zero_shot };

struct Answer {
    std::size_t index = 0;
    std::string text;
    AnswerOrigin origin = AnswerOrigin::seed;
    std::optional<std::string> feedback_used;
    std::size_t token_count = 0;

    bool operator==(const Answer&) const = default;
};

// Builds an answer whose token_count is derived from `text`.
Answer make_answer(std::size_t index, std::string text, AnswerOrigin origin,
                   std::optional<std::string> feedback_used = std::nullopt);

// Position of the preferred answer inside one judge prompt.
enum class Preference { A, B, tie };

struct CriterionScore {
    std::string criterion;
    int score_a = 0;
    int score_b = 0;

    bool operator==(const CriterionScore&) const = default;
};

struct Verdict {
    Preference preferred = Preference::tie;
    std::vector<CriterionScore> criterion_scores;
    std::string rationale;
    std::string raw_completion;
    // Deductions applied by the length penalty; zero unless one was applied.
    double length_penalty_a = 0.0;
    double length_penalty_b = 0.0;

    int total_a() const;
    int total_b() const;
    double adjusted_total_a() const { return total_a() - length_penalty_a; }
    double adjusted_total_b() const { return total_b() - length_penalty_b; }

    bool operator==(const Verdict&) const = default;
};

enum class PairOutcome { candidate_wins, incumbent_wins, disagreement };

// The two position-swapped judge calls made by one voter.
struct VoterCalls {
    Verdict first_call;
    std::optional<Verdict> second_call;

    bool operator==(const VoterCalls&) const = default;
};

struct DebiasedVerdict {
    // Candidate sits in slot B.
    Verdict first_call;
    // Candidate sits in slot A. Absent only when single-call judging is used.
    std::optional<Verdict> second_call;
    PairOutcome outcome = PairOutcome::disagreement;
    // Calls of voters 2..v when multi-judge voting is enabled.
    std::vector<VoterCalls> panel;

    bool operator==(const DebiasedVerdict&) const = default;
};

// Which answer a single call preferred once slot positions are undone.
enum class Side { incumbent, candidate, neither };

// first_call arrangement: incumbent in A, candidate in B.
Side side_in_first_arrangement(Preference p);
// second_call arrangement: candidate in A, incumbent in B.
Side side_in_second_arrangement(Preference p);

// Outcome implied by one voter's pair of calls.
PairOutcome derive_outcome(const Verdict& first_call, const std::optional<Verdict>& second_call);

enum class Termination { judge_stop, max_iterations, backend_failure };

enum class ChainMode { refine_n_judge, refiner_only, best_of_n, zero_shot };

struct PreferenceChain {
    std::string record_id;
    std::string query;
    std::vector<Answer> answers;
    std::optional<Answer> rejected_candidate;
    std::vector<DebiasedVerdict> step_verdicts;
    Termination termination = Termination::judge_stop;
    ChainMode mode = ChainMode::refine_n_judge;
    std::map<std::string, std::string> template_versions;
    Metadata metadata;

    const Answer& final_answer() const { return answers.back(); }

    bool operator==(const PreferenceChain&) const = default;
};

// Checks every well-formedness rule of a chain. Returns one human-readable
// entry per violated rule; an empty result means the chain is valid.
std::vector<std::string> validate_chain(const PreferenceChain& chain,
                                        std::size_t max_refinements = kDefaultMaxRefinements);

// Number of maximal runs of non-whitespace characters in `text`.
std::size_t canonical_token_count(std::string_view text);

bool is_blank(std::string_view text);
std::string trim(std::string_view text);

std::string_view to_string(AnswerOrigin v);
std::string_view to_string(Preference v);
std::string_view to_string(PairOutcome v);
std::string_view to_string(Termination v);
std::string_view to_string(ChainMode v);

std::optional<AnswerOrigin> parse_answer_origin(std::string_view s);
std::optional<Preference> parse_preference(std::string_view s);
std::optional<PairOutcome> parse_pair_outcome(std::string_view s);
std::optional<Termination> parse_termination(std::string_view s);
std::optional<ChainMode> parse_chain_mode(std::string_view s);

}  // namespace prefchain
