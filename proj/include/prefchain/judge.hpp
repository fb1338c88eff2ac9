#pragma once

// Position-debiased pairwise judging.
//
// Every comparison between an incumbent answer and a candidate is asked twice
// per voter: once with the incumbent in slot A and once with the slots
// swapped. The candidate wins only when the voters' majority prefers it in
// both arrangements.

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "prefchain/backend.hpp"
#include "prefchain/chain.hpp"
#include "prefchain/prompts.hpp"

namespace prefchain {

enum class DisagreementPolicy { incumbent_wins, rejudge_once_then_incumbent };

std::string_view to_string(DisagreementPolicy p);
std::optional<DisagreementPolicy> parse_disagreement_policy(std::string_view s);

struct JudgeConfig {
    double length_penalty_per_token = 0.0;
    DisagreementPolicy disagreement_policy = DisagreementPolicy::incumbent_wins;
    // Names of the judge backends that vote; resolved by the caller.
    std::vector<std::string> voters{"judge"};
    // false: a single judge call per voter (ablation of position swapping).
    bool debias = true;
    double temperature = 0.0;
    int max_output_tokens = 1024;
};

// Throws ConfigError when the config breaks its invariants.
void check_judge_config(const JudgeConfig& cfg);

// Parses a judge completion. Throws UnparseableVerdict when no preference can
// be recovered.
Verdict parse_verdict(std::string_view raw, const CriteriaSet& criteria);

// Deducts length_penalty_per_token for every token by which the longer answer
// exceeds the shorter one, then recomputes the preference from the adjusted
// totals. Verdicts without scores pass through unchanged.
Verdict apply_length_penalty(const Verdict& verdict, std::size_t len_a, std::size_t len_b, const JudgeConfig& cfg);

// 0..100 from a grading completion; throws UnparseableVerdict.
int parse_grade(std::string_view raw);
// 0-based candidate index from a selection completion; throws UnparseableVerdict.
std::size_t parse_selection(std::string_view raw, std::size_t candidate_count);

// Which arrangement is sent to the backend first. The stored verdict layout
// does not depend on it.
enum class ArrangementOrder { incumbent_first, candidate_first };

// Majority preference of the voters for one single-arrangement comparison.
struct SingleJudgment {
    Preference preferred = Preference::tie;
    std::vector<Verdict> votes;
};

class PairwiseJudge {
public:
    PairwiseJudge(std::vector<std::shared_ptr<Gateway>> voters, JudgeConfig cfg, TemplateSet templates,
                  CriteriaSet criteria);

    DebiasedVerdict judge_pair(std::string_view query, const Answer& incumbent, const Answer& candidate,
                               ArrangementOrder order = ArrangementOrder::incumbent_first) const;

    // One comparison with fixed slots, no swapping.
    SingleJudgment judge_single(std::string_view query, std::string_view answer_a, std::string_view answer_b) const;

    // Single-answer 0..100 grade from the first voter.
    int grade(std::string_view query, std::string_view answer) const;

    // Best candidate by a single selection prompt to the first voter.
    std::size_t select_best(std::string_view query, const std::vector<std::string>& candidates) const;

    const JudgeConfig& config() const { return cfg_; }
    const CriteriaSet& criteria() const { return criteria_; }
    const TemplateSet& templates() const { return templates_; }

private:
    Verdict call(Gateway& voter, std::string_view query, std::string_view a, std::string_view b,
                 Preference incumbent_slot) const;
    DebiasedVerdict one_round(std::string_view query, const Answer& incumbent, const Answer& candidate,
                              ArrangementOrder order) const;

    std::vector<std::shared_ptr<Gateway>> voters_;
    JudgeConfig cfg_;
    TemplateSet templates_;
    CriteriaSet criteria_;
};

}  // namespace prefchain
