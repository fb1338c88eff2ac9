#include "prefchain/loop.hpp"

#include <vector>

namespace prefchain {

std::string_view to_string(LoopMode m) {
    switch (m) {
        case LoopMode::refine_n_judge: return "refine_n_judge";
        case LoopMode::refiner_only: return "refiner_only";
        case LoopMode::best_of_n: return "best_of_n";
    }
    return "unknown";
}

std::optional<LoopMode> parse_loop_mode(std::string_view s) {
    if (s == "refine_n_judge") return LoopMode::refine_n_judge;
    if (s == "refiner_only") return LoopMode::refiner_only;
    if (s == "best_of_n") return LoopMode::best_of_n;
    return std::nullopt;
}

void check_loop_config(const LoopConfig& cfg) {
    if (cfg.max_refinements < 1) throw ConfigError("max_refinements must be >= 1");
    if (cfg.mode == LoopMode::best_of_n && cfg.best_of_n < 2) throw ConfigError("best_of_n must be >= 2");
    if (cfg.refiner_steps < 1) throw ConfigError("refiner_steps must be >= 1");
    if (!(cfg.refine_temperature >= 0.0 && cfg.refine_temperature <= 2.0)) {
        throw ConfigError("refine_temperature must lie in [0, 2]");
    }
    if (!(cfg.judge_temperature >= 0.0 && cfg.judge_temperature <= 2.0)) {
        throw ConfigError("judge_temperature must lie in [0, 2]");
    }
    check_judge_config(cfg.judge);
}

RefineLoop::RefineLoop(std::shared_ptr<Gateway> refiner, std::shared_ptr<const PairwiseJudge> judge, LoopConfig cfg,
                       TemplateSet templates, CriteriaSet criteria)
    : refiner_(std::move(refiner)),
      judge_(std::move(judge)),
      cfg_(std::move(cfg)),
      templates_(std::move(templates)),
      criteria_(std::move(criteria)) {
    if (!refiner_) throw ConfigError("refine loop requires a refiner backend");
    check_loop_config(cfg_);
    check_template(templates_.feedback);
    check_template(templates_.refine);
}

Answer RefineLoop::generate_zero_shot(std::string_view query) const {
    ChatRequest req;
    req.user = std::string(query);
    req.temperature = cfg_.refine_temperature;
    req.max_output_tokens = cfg_.max_output_tokens;
    req.tag = RequestTag::zero_shot;
    auto text = trim(refiner_->complete(req).text);
    if (text.empty()) throw BackendRefusal("zero-shot generation returned blank text");
    return make_answer(0, std::move(text), AnswerOrigin::zero_shot);
}

Answer RefineLoop::initial_answer(const QueryRecord& record) const {
    if (record.initial_answer && !is_blank(*record.initial_answer)) {
        return make_answer(0, *record.initial_answer, AnswerOrigin::seed);
    }
    return generate_zero_shot(record.query);
}

RefineStep RefineLoop::refine_once(std::string_view query, const Answer& answer) const {
    if (is_blank(answer.text)) throw InvalidRequest("cannot refine an empty answer");

    ChatRequest fb;
    fb.user = render_feedback(templates_.feedback, query, answer.text, criteria_);
    fb.temperature = cfg_.refine_temperature;
    fb.max_output_tokens = cfg_.max_output_tokens;
    fb.tag = RequestTag::feedback;
    auto feedback = trim(refiner_->complete(fb).text);

    ChatRequest rf;
    rf.user = render_refine(templates_.refine, query, answer.text, feedback, criteria_);
    rf.temperature = cfg_.refine_temperature;
    rf.max_output_tokens = cfg_.max_output_tokens;
    rf.tag = RequestTag::refine;

    for (int attempt = 0; attempt < 2; ++attempt) {
        auto text = trim(refiner_->complete(rf).text);
        if (!text.empty()) {
            return {feedback, make_answer(answer.index + 1, std::move(text), AnswerOrigin::refined, feedback)};
        }
    }
    throw EmptyRefinement("refiner returned whitespace-only text twice");
}

PreferenceChain RefineLoop::start_chain(const QueryRecord& record, ChainMode mode) const {
    PreferenceChain chain;
    chain.record_id = record.id;
    chain.query = record.query;
    chain.mode = mode;
    chain.metadata = record.metadata;
    if (mode == ChainMode::refine_n_judge || mode == ChainMode::refiner_only) {
        chain.template_versions["feedback"] = templates_.feedback.version;
        chain.template_versions["refine"] = templates_.refine.version;
    }
    if (judge_ && mode == ChainMode::refine_n_judge) {
        chain.template_versions["judge"] = judge_->templates().judge.version;
    }
    return chain;
}

PreferenceChain RefineLoop::run_chain(const QueryRecord& record) const {
    if (!judge_) throw ConfigError("run_chain requires a judge");
    auto chain = start_chain(record, ChainMode::refine_n_judge);
    chain.answers.push_back(initial_answer(record));

    std::size_t resamples_left = cfg_.max_resamples;
    while (chain.answers.size() - 1 < cfg_.max_refinements) {
        const Answer& incumbent = chain.answers.back();
        RefineStep step;
        DebiasedVerdict verdict;
        try {
            step = refine_once(chain.query, incumbent);
            verdict = judge_->judge_pair(chain.query, incumbent, step.refined);
        } catch (const BackendError&) {
            chain.rejected_candidate.reset();
            chain.termination = Termination::backend_failure;
            return chain;
        }

        if (verdict.outcome == PairOutcome::candidate_wins) {
            chain.answers.push_back(std::move(step.refined));
            chain.step_verdicts.push_back(std::move(verdict));
            chain.rejected_candidate.reset();
            resamples_left = cfg_.max_resamples;
            continue;
        }
        chain.rejected_candidate = std::move(step.refined);
        if (resamples_left > 0) {
            --resamples_left;
            continue;
        }
        chain.termination = Termination::judge_stop;
        return chain;
    }
    chain.rejected_candidate.reset();
    chain.termination = Termination::max_iterations;
    return chain;
}

PreferenceChain RefineLoop::run_refiner_only(const QueryRecord& record, std::size_t n_steps) const {
    if (n_steps < 1) throw ConfigError("refiner-only baseline needs n_steps >= 1");
    auto chain = start_chain(record, ChainMode::refiner_only);
    chain.answers.push_back(initial_answer(record));
    for (std::size_t i = 0; i < n_steps; ++i) {
        try {
            auto step = refine_once(chain.query, chain.answers.back());
            chain.answers.push_back(std::move(step.refined));
        } catch (const BackendError&) {
            chain.termination = Termination::backend_failure;
            return chain;
        }
    }
    chain.termination = Termination::max_iterations;
    return chain;
}

Answer RefineLoop::run_best_of_n(const QueryRecord& record) const {
    if (!judge_) throw ConfigError("best-of-n requires a judge");
    if (cfg_.best_of_n < 2) throw ConfigError("best_of_n must be >= 2");

    std::vector<Answer> candidates;
    candidates.reserve(cfg_.best_of_n);
    for (std::size_t i = 0; i < cfg_.best_of_n; ++i) {
        try {
            candidates.push_back(generate_zero_shot(record.query));
        } catch (const BackendRefusal&) {
            // A refused candidate drops out; the field shrinks.
        }
    }
    if (candidates.empty()) throw BackendRefusal("every best-of-n generation was refused");

    if (cfg_.best_of_n_selector == BestOfNSelector::single_prompt) {
        std::vector<std::string> texts;
        for (const auto& c : candidates) texts.push_back(c.text);
        return candidates[judge_->select_best(record.query, texts)];
    }

    std::size_t survivor = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const auto verdict = judge_->judge_pair(record.query, candidates[survivor], candidates[i]);
        if (verdict.outcome == PairOutcome::candidate_wins) survivor = i;
    }
    return candidates[survivor];
}

Answer RefineLoop::run_zero_shot(const QueryRecord& record) const { return generate_zero_shot(record.query); }

}  // namespace prefchain
