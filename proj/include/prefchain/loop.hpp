#pragma once

// The refine-and-judge loop and its two baselines.
//
// refine_n_judge: feedback -> refinement -> debiased judgment; a refinement is
// appended only when it beats the current answer, otherwise the loop stops.
// refiner_only: the same refinement step applied a fixed number of times with
// no judge. best_of_n: N zero-shot answers reduced to one by judging.

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "prefchain/backend.hpp"
#include "prefchain/chain.hpp"
#include "prefchain/judge.hpp"
#include "prefchain/prompts.hpp"

namespace prefchain {

enum class LoopMode { refine_n_judge, refiner_only, best_of_n };

std::string_view to_string(LoopMode m);
std::optional<LoopMode> parse_loop_mode(std::string_view s);

enum class BestOfNSelector { pairwise, single_prompt };

struct LoopConfig {
    std::size_t max_refinements = kDefaultMaxRefinements;
    JudgeConfig judge;
    double refine_temperature = 0.7;
    double judge_temperature = 0.0;
    int max_output_tokens = 1024;
    LoopMode mode = LoopMode::refine_n_judge;
    std::size_t best_of_n = 10;
    BestOfNSelector best_of_n_selector = BestOfNSelector::pairwise;
    // Steps for the refiner-only baseline.
    std::size_t refiner_steps = 10;
    // Extra refinements tried against the same incumbent after a rejection.
    // Zero reproduces the stop-on-first-rejection rule.
    std::size_t max_resamples = 0;
};

// Throws ConfigError when the config breaks its invariants.
void check_loop_config(const LoopConfig& cfg);

struct RefineStep {
    std::string feedback;
    Answer refined;
};

class RefineLoop {
public:
    // `refiner` serves feedback, refine and zero_shot calls; `judge` owns its
    // own gateways.
    RefineLoop(std::shared_ptr<Gateway> refiner, std::shared_ptr<const PairwiseJudge> judge, LoopConfig cfg,
               TemplateSet templates, CriteriaSet criteria);

    // Ans_0 for the record: the dataset answer, or a zero-shot generation.
    Answer initial_answer(const QueryRecord& record) const;

    RefineStep refine_once(std::string_view query, const Answer& answer) const;

    PreferenceChain run_chain(const QueryRecord& record) const;

    PreferenceChain run_refiner_only(const QueryRecord& record, std::size_t n_steps) const;

    Answer run_best_of_n(const QueryRecord& record) const;

    // One zero-shot answer, for the zero_shot baseline.
    Answer run_zero_shot(const QueryRecord& record) const;

    const LoopConfig& config() const { return cfg_; }

private:
    Answer generate_zero_shot(std::string_view query) const;
    PreferenceChain start_chain(const QueryRecord& record, ChainMode mode) const;

    std::shared_ptr<Gateway> refiner_;
    std::shared_ptr<const PairwiseJudge> judge_;
    LoopConfig cfg_;
    TemplateSet templates_;
    CriteriaSet criteria_;
};

}  // namespace prefchain
