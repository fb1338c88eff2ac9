#include "prefchain/judge.hpp"

#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>

namespace prefchain {

namespace {

constexpr auto kIcase = std::regex::ECMAScript | std::regex::icase;

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::string line;
    std::istringstream in{std::string(text)};
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::optional<Preference> letter_to_preference(const std::string& token) {
    if (token.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
        if (c == 'A') return Preference::A;
        if (c == 'B') return Preference::B;
    }
    std::string lower;
    for (char c : token) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "tie") return Preference::tie;
    return std::nullopt;
}

// "Preferred: B", "**Preferred answer** - a", "Preferred = tie".
std::optional<Preference> canonical_preference(const std::vector<std::string>& lines) {
    static const std::regex re(
        R"(^[\s*#>_-]*preferred(?:\s+(?:answer|response))?[\s*_]*[:=-]\s*[*_]*\s*(?:answer\s+|response\s+)?\(?\s*(a|b|tie)\b)",
        kIcase);
    for (const auto& line : lines) {
        std::smatch m;
        if (std::regex_search(line, m, re)) return letter_to_preference(m[1].str());
    }
    return std::nullopt;
}

// Free-text preference statements. Each pattern captures an optional slot
// label (group 1) and the decision token (group 2). A lowercase "a" or "b"
// without a label is read as an English word, not a slot.
struct LenientPattern {
    std::regex re;
};

const std::vector<LenientPattern>& lenient_patterns() {
    static const std::string label = R"((answer|response|option|assistant|output)?\s*)";
    static const std::string slot = R"(\(?\s*(a|b)\b\)?)";
    static const std::string degree =
        R"((?:(?:much|slightly|clearly|definitely|significantly|far|the|a|overall|somewhat|marginally|noticeably|obviously)\s+)*)";
    static const std::vector<LenientPattern> patterns{
        // "Answer B is clearly better", "B is the stronger response"
        {std::regex("\\b" + label + slot + R"(\s+(?:is|was|seems|appears|looks|would be|comes out|ranks)\s+)" + degree +
                        R"((?:better|superior|stronger|preferable|preferred|best|winner|ahead|more helpful|more accurate|the better one|on top))",
                    kIcase)},
        // "The better answer is B", "best response: A", "winner is Response A"
        {std::regex(R"(\b(?:better|best|superior|stronger|preferred|preferable|winning|winner|final)\s+(?:answer|response|option|one|choice|pick)?\s*(?:is|:|=|would be|here is)\s*[*_]*)" +
                        label + slot,
                    kIcase)},
        // "I prefer B", "I would choose Answer A", "I'd go with response B"
        {std::regex(R"(\bi(?:\s+would|\s+will|'d|'ll)?\s+(?:prefer|choose|pick|select|favor|favour|go with|side with|recommend)\s+)" +
                        label + slot,
                    kIcase)},
        // "Verdict: A", "My choice: Answer B", "Decision - b"
        {std::regex(R"(\b(?:verdict|choice|decision|selection|winner|result)\s*(?:is)?\s*[:=-]?\s*[*_]*)" + label + slot,
                    kIcase)},
        // "A wins", "Answer B wins"
        {std::regex("\\b" + label + slot + R"(\s+(?:wins|prevails|is preferred))", kIcase)},
        // "I'd rate answer A higher", "Response A edges out"
        {std::regex("\\b" + label + slot + R"(\s+(?:edges out|outperforms|beats))", kIcase)},
    };
    return patterns;
}

bool is_tie_statement(const std::string& text) {
    static const std::regex re(
        R"(\b(?:it'?s|it is|this is|that is|declare|call it|result is|verdict is|verdict:)\s+(?:a\s+)?tie\b|\bthey\s+are\s+tied\b|\bneither\s+(?:answer|response|one)?\s*is\s+better\b|\bequally\s+good,?\s+so\s+(?:it'?s\s+)?a\s+tie\b)",
        kIcase);
    return std::regex_search(text, re);
}

std::optional<Preference> lenient_preference(const std::string& text) {
    std::optional<Preference> best;
    std::ptrdiff_t best_pos = -1;
    for (const auto& pattern : lenient_patterns()) {
        for (auto it = std::sregex_iterator(text.begin(), text.end(), pattern.re); it != std::sregex_iterator();
             ++it) {
            const auto& m = *it;
            const std::string letter = m[2].str();
            if (!m[1].matched && (letter == "a" || letter == "b")) continue;
            const auto pref = letter_to_preference(letter);
            if (!pref) continue;
            // The statement closest to the end of the text is the conclusion.
            if (m.position(0) >= best_pos) {
                best_pos = m.position(0);
                best = pref;
            }
        }
    }
    if (!best && is_tie_statement(text)) return Preference::tie;
    return best;
}

std::vector<CriterionScore> parse_scores(const std::vector<std::string>& lines, const CriteriaSet& criteria) {
    static const std::regex re(
        R"(^[\s*#>_-]*(?:\d+[.)]\s*)?([a-z][a-z _-]*?)[\s*_]*[:=-]\s*[*_]*\s*a\s*[=:]?\s*(\d+)(?:\s*/\s*10)?\s*[,;|/]?\s*b\s*[=:]?\s*(\d+))",
        kIcase);
    std::vector<CriterionScore> scores;
    for (const auto& line : lines) {
        std::smatch m;
        if (!std::regex_search(line, m, re)) continue;
        std::string name = trim(m[1].str());
        for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (!criteria.contains(name)) continue;
        const int a = std::stoi(m[2].str().substr(0, 3));
        const int b = std::stoi(m[3].str().substr(0, 3));
        if (a > 10 || b > 10) continue;
        const bool seen = std::any_of(scores.begin(), scores.end(),
                                      [&](const CriterionScore& s) { return s.criterion == name; });
        if (!seen) scores.push_back({name, a, b});
    }
    return scores;
}

std::string parse_rationale(const std::vector<std::string>& lines) {
    static const std::regex re(R"(^[\s*#>_-]*(?:reason|justification|rationale|explanation)[\s*_]*:\s*(.*\S))", kIcase);
    for (const auto& line : lines) {
        std::smatch m;
        if (std::regex_search(line, m, re)) return m[1].str();
    }
    return {};
}

Preference preference_from_totals(double a, double b) {
    constexpr double eps = 1e-9;
    if (std::abs(a - b) <= eps) return Preference::tie;
    return a > b ? Preference::A : Preference::B;
}

struct Tally {
    int candidate = 0;
    int incumbent = 0;

    void add(Side s) {
        if (s == Side::candidate) ++candidate;
        if (s == Side::incumbent) ++incumbent;
    }
    Side majority(int voters) const {
        if (2 * candidate > voters) return Side::candidate;
        if (2 * incumbent > voters) return Side::incumbent;
        return Side::neither;
    }
};

}  // namespace

std::string_view to_string(DisagreementPolicy p) {
    return p == DisagreementPolicy::incumbent_wins ? "incumbent_wins" : "rejudge_once_then_incumbent";
}

std::optional<DisagreementPolicy> parse_disagreement_policy(std::string_view s) {
    if (s == "incumbent_wins") return DisagreementPolicy::incumbent_wins;
    if (s == "rejudge_once_then_incumbent") return DisagreementPolicy::rejudge_once_then_incumbent;
    return std::nullopt;
}

void check_judge_config(const JudgeConfig& cfg) {
    if (cfg.voters.empty()) throw ConfigError("judge needs at least one voter");
    if (!(cfg.length_penalty_per_token >= 0.0 && cfg.length_penalty_per_token < 1.0)) {
        throw ConfigError("length_penalty_per_token must lie in [0, 1)");
    }
    if (!(cfg.temperature >= 0.0 && cfg.temperature <= 2.0)) throw ConfigError("judge temperature must lie in [0, 2]");
    if (cfg.max_output_tokens <= 0) throw ConfigError("judge max_output_tokens must be positive");
}

Verdict parse_verdict(std::string_view raw, const CriteriaSet& criteria) {
    const auto lines = split_lines(raw);
    const std::string text(raw);

    auto preferred = canonical_preference(lines);
    if (!preferred) preferred = lenient_preference(text);
    if (!preferred) {
        throw UnparseableVerdict("no preference found in judge output: " + text.substr(0, 120));
    }

    Verdict v;
    v.raw_completion = text;
    v.criterion_scores = parse_scores(lines, criteria);
    v.rationale = parse_rationale(lines);
    v.preferred = *preferred;

    // Scores decide when the stated preference contradicts them.
    if (!v.criterion_scores.empty() && v.preferred != Preference::tie) {
        const auto from_totals = preference_from_totals(v.total_a(), v.total_b());
        if (from_totals != Preference::tie && from_totals != v.preferred) v.preferred = from_totals;
    }
    return v;
}

Verdict apply_length_penalty(const Verdict& verdict, std::size_t len_a, std::size_t len_b, const JudgeConfig& cfg) {
    if (verdict.criterion_scores.empty() || cfg.length_penalty_per_token == 0.0 || len_a == len_b) return verdict;
    Verdict out = verdict;
    const double excess = static_cast<double>(len_a > len_b ? len_a - len_b : len_b - len_a);
    const double penalty = cfg.length_penalty_per_token * excess;
    out.length_penalty_a = len_a > len_b ? penalty : 0.0;
    out.length_penalty_b = len_b > len_a ? penalty : 0.0;
    out.preferred = preference_from_totals(out.adjusted_total_a(), out.adjusted_total_b());
    return out;
}

int parse_grade(std::string_view raw) {
    static const std::regex re(R"(\b(?:score|grade|rating)\s*[:=]\s*\**\s*(\d{1,3})\b)", kIcase);
    const std::string text(raw);
    std::smatch m;
    if (std::regex_search(text, m, re)) {
        const int value = std::stoi(m[1].str());
        if (value >= 0 && value <= 100) return value;
    }
    throw UnparseableVerdict("no 0-100 score found in grading output");
}

std::size_t parse_selection(std::string_view raw, std::size_t candidate_count) {
    static const std::regex re(R"(\bbest(?:\s+candidate)?\s*[:=]\s*\**\s*(?:candidate\s*)?#?(\d+))", kIcase);
    const std::string text(raw);
    std::smatch m;
    if (std::regex_search(text, m, re)) {
        const auto n = std::stoul(m[1].str());
        if (n >= 1 && n <= candidate_count) return n - 1;
    }
    throw UnparseableVerdict("no valid candidate number found in selection output");
}

PairwiseJudge::PairwiseJudge(std::vector<std::shared_ptr<Gateway>> voters, JudgeConfig cfg, TemplateSet templates,
                             CriteriaSet criteria)
    : voters_(std::move(voters)), cfg_(std::move(cfg)), templates_(std::move(templates)), criteria_(std::move(criteria)) {
    if (voters_.empty()) throw ConfigError("judge needs at least one voter backend");
    for (const auto& v : voters_) {
        if (!v) throw ConfigError("judge voter backend is null");
    }
    if (cfg_.voters.size() != voters_.size()) cfg_.voters.resize(voters_.size(), "judge");
    check_judge_config(cfg_);
    check_template(templates_.judge);
}

Verdict PairwiseJudge::call(Gateway& voter, std::string_view query, std::string_view a, std::string_view b,
                            Preference incumbent_slot) const {
    ChatRequest req;
    req.user = render_judge(templates_.judge, query, a, b, criteria_);
    req.temperature = cfg_.temperature;
    req.max_output_tokens = cfg_.max_output_tokens;
    req.tag = RequestTag::judge;

    std::string last_raw;
    for (int ask = 0; ask < 2; ++ask) {
        const auto completion = voter.complete(req);
        last_raw = completion.text;
        try {
            auto v = parse_verdict(completion.text, criteria_);
            if (cfg_.length_penalty_per_token > 0.0) {
                v = apply_length_penalty(v, canonical_token_count(a), canonical_token_count(b), cfg_);
            }
            return v;
        } catch (const UnparseableVerdict&) {
        }
    }
    // Fail safe: an unreadable verdict counts as a vote for the incumbent.
    Verdict v;
    v.preferred = incumbent_slot;
    v.rationale = "unparseable verdict after re-ask; counted for the incumbent";
    v.raw_completion = last_raw;
    return v;
}

DebiasedVerdict PairwiseJudge::one_round(std::string_view query, const Answer& incumbent, const Answer& candidate,
                                         ArrangementOrder order) const {
    std::vector<VoterCalls> calls(voters_.size());
    Tally first_tally;
    Tally second_tally;
    for (std::size_t i = 0; i < voters_.size(); ++i) {
        auto& voter = *voters_[i];
        auto first = [&] { return call(voter, query, incumbent.text, candidate.text, Preference::A); };
        auto second = [&] { return call(voter, query, candidate.text, incumbent.text, Preference::B); };
        if (!cfg_.debias) {
            calls[i].first_call = first();
        } else if (order == ArrangementOrder::incumbent_first) {
            calls[i].first_call = first();
            calls[i].second_call = second();
        } else {
            calls[i].second_call = second();
            calls[i].first_call = first();
        }
        first_tally.add(side_in_first_arrangement(calls[i].first_call.preferred));
        if (calls[i].second_call) second_tally.add(side_in_second_arrangement(calls[i].second_call->preferred));
    }

    const int v = static_cast<int>(voters_.size());
    const Side m1 = first_tally.majority(v);
    const Side m2 = cfg_.debias ? second_tally.majority(v) : m1;

    DebiasedVerdict out;
    out.first_call = std::move(calls.front().first_call);
    out.second_call = std::move(calls.front().second_call);
    out.panel.assign(std::make_move_iterator(calls.begin() + 1), std::make_move_iterator(calls.end()));
    if (m1 == Side::candidate && m2 == Side::candidate) {
        out.outcome = PairOutcome::candidate_wins;
    } else if (m1 == Side::incumbent && m2 == Side::incumbent) {
        out.outcome = PairOutcome::incumbent_wins;
    } else {
        out.outcome = PairOutcome::disagreement;
    }
    return out;
}

DebiasedVerdict PairwiseJudge::judge_pair(std::string_view query, const Answer& incumbent, const Answer& candidate,
                                          ArrangementOrder order) const {
    if (is_blank(incumbent.text) || is_blank(candidate.text)) {
        throw InvalidRequest("judge_pair requires two non-empty answers");
    }
    auto verdict = one_round(query, incumbent, candidate, order);
    if (verdict.outcome == PairOutcome::disagreement &&
        cfg_.disagreement_policy == DisagreementPolicy::rejudge_once_then_incumbent) {
        verdict = one_round(query, incumbent, candidate, order);
    }
    return verdict;
}

SingleJudgment PairwiseJudge::judge_single(std::string_view query, std::string_view answer_a,
                                           std::string_view answer_b) const {
    SingleJudgment out;
    int a = 0;
    int b = 0;
    for (const auto& voter : voters_) {
        // Without an incumbent, an unreadable verdict is recorded as a tie.
        auto v = call(*voter, query, answer_a, answer_b, Preference::tie);
        if (v.preferred == Preference::A) ++a;
        if (v.preferred == Preference::B) ++b;
        out.votes.push_back(std::move(v));
    }
    const int n = static_cast<int>(voters_.size());
    out.preferred = 2 * a > n ? Preference::A : (2 * b > n ? Preference::B : Preference::tie);
    return out;
}

int PairwiseJudge::grade(std::string_view query, std::string_view answer) const {
    ChatRequest req;
    req.user = render_grade(templates_.grade, query, answer, criteria_);
    req.temperature = cfg_.temperature;
    req.max_output_tokens = cfg_.max_output_tokens;
    req.tag = RequestTag::judge;
    return parse_grade(voters_.front()->complete(req).text);
}

std::size_t PairwiseJudge::select_best(std::string_view query, const std::vector<std::string>& candidates) const {
    if (candidates.empty()) throw InvalidRequest("select_best requires at least one candidate");
    ChatRequest req;
    req.user = render_select(templates_.select, query, candidates, criteria_);
    req.temperature = cfg_.temperature;
    req.max_output_tokens = cfg_.max_output_tokens;
    req.tag = RequestTag::judge;
    return parse_selection(voters_.front()->complete(req).text, candidates.size());
}

}  // namespace prefchain
