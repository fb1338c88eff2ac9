#include "prefchain/chain.hpp"

#include <array>
#include <numeric>
#include <sstream>
#include <utility>

namespace prefchain {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
}

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(std::string_view s, const std::array<std::pair<std::string_view, Enum>, N>& table) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    return std::nullopt;
}

constexpr std::array<std::pair<std::string_view, AnswerOrigin>, 3> kOrigins{{
    {"seed", AnswerOrigin::seed},
    {"refined", AnswerOrigin::refined},
    {"zero_shot", AnswerOrigin::zero_shot},
}};
constexpr std::array<std::pair<std::string_view, Preference>, 3> kPreferences{{
    {"A", Preference::A},
    {"B", Preference::B},
    {"tie", Preference::tie},
}};
constexpr std::array<std::pair<std::string_view, PairOutcome>, 3> kOutcomes{{
    {"candidate_wins", PairOutcome::candidate_wins},
    {"incumbent_wins", PairOutcome::incumbent_wins},
    {"disagreement", PairOutcome::disagreement},
}};
constexpr std::array<std::pair<std::string_view, Termination>, 3> kTerminations{{
    {"judge_stop", Termination::judge_stop},
    {"max_iterations", Termination::max_iterations},
    {"backend_failure", Termination::backend_failure},
}};
constexpr std::array<std::pair<std::string_view, ChainMode>, 4> kModes{{
    {"refine_n_judge", ChainMode::refine_n_judge},
    {"refiner_only", ChainMode::refiner_only},
    {"best_of_n", ChainMode::best_of_n},
    {"zero_shot", ChainMode::zero_shot},
}};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum v, const std::array<std::pair<std::string_view, Enum>, N>& table) {
    for (const auto& [name, value] : table) {
        if (value == v) return name;
    }
    return "unknown";
}

void check_verdict(const Verdict& v, const std::string& where, std::vector<std::string>& out) {
    if (v.preferred == Preference::tie || v.criterion_scores.empty()) return;
    const double a = v.adjusted_total_a();
    const double b = v.adjusted_total_b();
    if ((v.preferred == Preference::A && a < b) || (v.preferred == Preference::B && b < a)) {
        std::ostringstream os;
        os << where << ".preferred " << to_string(v.preferred) << " has lower score sum (A=" << a
           << ", B=" << b << ")";
        out.push_back(os.str());
    }
    for (const auto& s : v.criterion_scores) {
        if (s.score_a < 0 || s.score_a > 10 || s.score_b < 0 || s.score_b > 10) {
            out.push_back(where + ".criterion_scores[" + s.criterion + "] outside 0..10");
        }
    }
}

void check_answer(const Answer& a, std::size_t expected_index, const std::string& where,
                  std::vector<std::string>& out) {
    if (a.index != expected_index) {
        out.push_back(where + ".index " + std::to_string(a.index) + " != " +
                      std::to_string(expected_index));
    }
    if (a.index == 0 && a.origin == AnswerOrigin::refined) {
        out.push_back(where + ".origin refined at index 0");
    }
    if (a.index > 0 && a.origin != AnswerOrigin::refined) {
        out.push_back(where + ".origin " + std::string(to_string(a.origin)) + " at index " +
                      std::to_string(a.index) + " (must be refined)");
    }
    const auto expected_tokens = canonical_token_count(a.text);
    if (a.token_count != expected_tokens) {
        out.push_back(where + ".token_count " + std::to_string(a.token_count) + " != " +
                      std::to_string(expected_tokens));
    }
}

}  // namespace

Answer make_answer(std::size_t index, std::string text, AnswerOrigin origin,
                   std::optional<std::string> feedback_used) {
    Answer a;
    a.index = index;
    a.token_count = canonical_token_count(text);
    a.text = std::move(text);
    a.origin = origin;
    a.feedback_used = std::move(feedback_used);
    return a;
}

int Verdict::total_a() const {
    return std::accumulate(criterion_scores.begin(), criterion_scores.end(), 0,
                           [](int acc, const CriterionScore& s) { return acc + s.score_a; });
}

int Verdict::total_b() const {
    return std::accumulate(criterion_scores.begin(), criterion_scores.end(), 0,
                           [](int acc, const CriterionScore& s) { return acc + s.score_b; });
}

Side side_in_first_arrangement(Preference p) {
    switch (p) {
        case Preference::A: return Side::incumbent;
        case Preference::B: return Side::candidate;
        case Preference::tie: break;
    }
    return Side::neither;
}

Side side_in_second_arrangement(Preference p) {
    switch (p) {
        case Preference::A: return Side::candidate;
        case Preference::B: return Side::incumbent;
        case Preference::tie: break;
    }
    return Side::neither;
}

PairOutcome derive_outcome(const Verdict& first_call, const std::optional<Verdict>& second_call) {
    const Side first = side_in_first_arrangement(first_call.preferred);
    const Side second = second_call ? side_in_second_arrangement(second_call->preferred) : first;
    if (first == Side::candidate && second == Side::candidate) return PairOutcome::candidate_wins;
    if (first == Side::incumbent && second == Side::incumbent) return PairOutcome::incumbent_wins;
    return PairOutcome::disagreement;
}

std::vector<std::string> validate_chain(const PreferenceChain& chain, std::size_t max_refinements) {
    std::vector<std::string> out;

    if (chain.record_id.empty()) out.emplace_back("record_id is empty");
    if (is_blank(chain.query)) out.emplace_back("query is blank");

    if (chain.answers.empty()) {
        out.emplace_back("answers is empty");
    }
    for (std::size_t t = 0; t < chain.answers.size(); ++t) {
        check_answer(chain.answers[t], t, "answers[" + std::to_string(t) + "]", out);
    }
    if (chain.answers.size() > max_refinements + 1) {
        out.push_back("answers length " + std::to_string(chain.answers.size()) + " exceeds " +
                      std::to_string(max_refinements + 1));
    }

    const bool single_answer_mode =
        chain.mode == ChainMode::best_of_n || chain.mode == ChainMode::zero_shot;
    if (single_answer_mode) {
        if (chain.answers.size() > 1) {
            out.push_back("answers length " + std::to_string(chain.answers.size()) + " > 1 for mode " +
                          std::string(to_string(chain.mode)));
        }
        if (!chain.answers.empty() && chain.answers.front().origin != AnswerOrigin::zero_shot) {
            out.emplace_back("answers[0].origin must be zero_shot for baseline generation modes");
        }
    }

    if (chain.rejected_candidate) {
        const std::size_t expected = chain.answers.size();
        const auto& r = *chain.rejected_candidate;
        if (r.index != expected) {
            out.push_back("rejected_candidate.index " + std::to_string(r.index) + " != " +
                          std::to_string(expected));
        }
        if (r.origin != AnswerOrigin::refined) out.emplace_back("rejected_candidate.origin must be refined");
        if (r.token_count != canonical_token_count(r.text)) {
            out.emplace_back("rejected_candidate.token_count does not match its text");
        }
        if (chain.mode != ChainMode::refine_n_judge) {
            out.emplace_back("rejected_candidate present outside refine_n_judge mode");
        }
    }
    if (chain.termination == Termination::judge_stop && !chain.rejected_candidate) {
        out.emplace_back("termination judge_stop requires rejected_candidate");
    }
    if (chain.termination == Termination::max_iterations && chain.rejected_candidate) {
        out.emplace_back("termination max_iterations forbids rejected_candidate");
    }

    const std::size_t expected_steps = (chain.mode == ChainMode::refine_n_judge && !chain.answers.empty())
                                           ? chain.answers.size() - 1
                                           : 0;
    if (chain.step_verdicts.size() != expected_steps) {
        out.push_back("step_verdicts length " + std::to_string(chain.step_verdicts.size()) + " ≠ " +
                      std::to_string(expected_steps));
    }
    for (std::size_t i = 0; i < chain.step_verdicts.size(); ++i) {
        const auto& dv = chain.step_verdicts[i];
        const std::string where = "step_verdicts[" + std::to_string(i) + "]";
        if (dv.outcome != PairOutcome::candidate_wins) {
            out.push_back(where + ".outcome " + std::string(to_string(dv.outcome)) +
                          " (accepted steps require candidate_wins)");
        }
        if (dv.panel.empty() && derive_outcome(dv.first_call, dv.second_call) != dv.outcome) {
            out.push_back(where + ".outcome inconsistent with its two calls");
        }
        check_verdict(dv.first_call, where + ".first_call", out);
        if (dv.second_call) check_verdict(*dv.second_call, where + ".second_call", out);
    }
    return out;
}

std::size_t canonical_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++count;
        }
    }
    return count;
}

bool is_blank(std::string_view text) {
    for (char c : text) {
        if (!is_space(c)) return false;
    }
    return true;
}

std::string trim(std::string_view text) {
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    return std::string(text.substr(b, e - b));
}

std::string_view to_string(AnswerOrigin v) { return name_of(v, kOrigins); }
std::string_view to_string(Preference v) { return name_of(v, kPreferences); }
std::string_view to_string(PairOutcome v) { return name_of(v, kOutcomes); }
std::string_view to_string(Termination v) { return name_of(v, kTerminations); }
std::string_view to_string(ChainMode v) { return name_of(v, kModes); }

std::optional<AnswerOrigin> parse_answer_origin(std::string_view s) { return lookup(s, kOrigins); }
std::optional<Preference> parse_preference(std::string_view s) { return lookup(s, kPreferences); }
std::optional<PairOutcome> parse_pair_outcome(std::string_view s) { return lookup(s, kOutcomes); }
std::optional<Termination> parse_termination(std::string_view s) { return lookup(s, kTerminations); }
std::optional<ChainMode> parse_chain_mode(std::string_view s) { return lookup(s, kModes); }

}  // namespace prefchain
