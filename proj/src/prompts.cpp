#include "prefchain/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "prefchain/chain.hpp"
#include "prefchain/errors.hpp"

namespace prefchain {

namespace {

constexpr std::array<std::pair<std::string_view, TemplateKind>, 5> kKinds{{
    {"feedback", TemplateKind::feedback},
    {"refine", TemplateKind::refine},
    {"judge", TemplateKind::judge},
    {"grade", TemplateKind::grade},
    {"select", TemplateKind::select},
}};

const std::set<std::string, std::less<>>& known_placeholders() {
    static const std::set<std::string, std::less<>> names{
        "query", "answer", "feedback", "answer_a", "answer_b", "criteria", "candidates"};
    return names;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Calls `on_text` for literal spans and `on_placeholder` for every {name}
// whose name is a known placeholder. Unknown brace groups are literal text.
template <typename OnText, typename OnPlaceholder>
void scan(std::string_view body, OnText on_text, OnPlaceholder on_placeholder) {
    std::size_t pos = 0;
    std::size_t literal_start = 0;
    while (pos < body.size()) {
        if (body[pos] == '{') {
            const auto close = body.find('}', pos + 1);
            if (close != std::string_view::npos) {
                const auto name = body.substr(pos + 1, close - pos - 1);
                if (known_placeholders().count(name) != 0) {
                    on_text(body.substr(literal_start, pos - literal_start));
                    on_placeholder(name);
                    pos = close + 1;
                    literal_start = pos;
                    continue;
                }
            }
        }
        ++pos;
    }
    on_text(body.substr(literal_start));
}

std::string substitute(const PromptTemplate& tmpl, const std::map<std::string, std::string, std::less<>>& values) {
    check_template(tmpl);
    std::string out;
    out.reserve(tmpl.body.size() + 256);
    scan(
        tmpl.body, [&](std::string_view text) { out.append(text); },
        [&](std::string_view name) {
            const auto it = values.find(name);
            if (it != values.end()) out.append(it->second);
        });
    return out;
}

void expect_kind(const PromptTemplate& tmpl, TemplateKind kind) {
    if (tmpl.kind != kind) {
        throw MissingPlaceholder("template of kind " + std::string(to_string(tmpl.kind)) +
                                 " used where " + std::string(to_string(kind)) + " is required");
    }
}

constexpr std::string_view kFeedbackBody =
    R"(You are reviewing an answer to a user's question. Assess the answer against each of the following criteria:
{criteria}

Question:
{query}

Answer:
{answer}

Write concise, actionable feedback that explains, criterion by criterion, how the answer could be improved. Do not rewrite the answer yourself.
)";

constexpr std::string_view kRefineBody =
    R"(Improve the answer to the question below by applying the feedback. Keep whatever is already correct and address every point raised in the feedback. The improved answer should do well on these criteria:
{criteria}

Question:
{query}

Current answer:
{answer}

Feedback:
{feedback}

Return only the improved answer, with no preamble or commentary.
)";

constexpr std::string_view kJudgeBody =
    R"(You are an impartial judge comparing two answers to the same question. Grade each answer on every criterion below with an integer score from 0 to 10:
{criteria}

Question:
{query}

{answer_a}

{answer_b}

Add up the scores of each answer. The answer with the higher total is preferred; the order in which the answers are shown must not influence your decision. Respond in exactly this format:
<criterion>: A=<score> B=<score>   (one line per criterion, in the order listed)
Total: A=<sum> B=<sum>
Preferred: A, B or tie
Reason: <one-line justification>
)";

constexpr std::string_view kGradeBody =
    R"(You are grading a single answer to a user's question. Consider these criteria:
{criteria}

Question:
{query}

Answer:
{answer}

Rate the overall quality of the answer with an integer from 0 (useless or wrong) to 100 (excellent). Respond in exactly this format:
Score: <0-100>
Reason: <one-line justification>
)";

constexpr std::string_view kSelectBody =
    R"(Several candidate answers to the same question follow. Judge them on these criteria:
{criteria}

Question:
{query}

{candidates}

Choose the single best candidate. Respond in exactly this format:
Best: <candidate number>
Reason: <one-line justification>
)";

}  // namespace

CriteriaSet::CriteriaSet(std::vector<Criterion> criteria) {
    if (criteria.empty()) throw InvalidCriteria("criteria set is empty");
    std::set<std::string> seen;
    for (auto& c : criteria) {
        c.name = lowercase(trim(c.name));
        c.description = trim(c.description);
        if (c.name.empty()) throw InvalidCriteria("criterion name is empty");
        if (!seen.insert(c.name).second) throw InvalidCriteria("duplicate criterion '" + c.name + "'");
    }
    criteria_ = std::move(criteria);
}

CriteriaSet CriteriaSet::defaults() {
    return CriteriaSet({
        {"accuracy", "the answer is factually correct and free of misleading claims"},
        {"completeness", "the answer covers everything the question asks for"},
        {"clarity", "the answer is easy to follow and well organized"},
        {"conciseness", "the answer avoids redundancy and unnecessary length"},
        {"relevance", "the answer stays focused on the question"},
    });
}

bool CriteriaSet::contains(std::string_view name) const {
    const auto key = lowercase(name);
    return std::any_of(criteria_.begin(), criteria_.end(), [&](const Criterion& c) { return c.name == key; });
}

std::string CriteriaSet::render() const {
    std::string out;
    for (std::size_t i = 0; i < criteria_.size(); ++i) {
        if (i != 0) out += '\n';
        out += std::to_string(i + 1) + ". " + criteria_[i].name;
        if (!criteria_[i].description.empty()) out += ": " + criteria_[i].description;
    }
    return out;
}

std::string_view to_string(TemplateKind kind) {
    for (const auto& [name, value] : kKinds) {
        if (value == kind) return name;
    }
    return "unknown";
}

std::optional<TemplateKind> parse_template_kind(std::string_view s) {
    for (const auto& [name, value] : kKinds) {
        if (name == s) return value;
    }
    return std::nullopt;
}

const std::vector<std::string>& required_placeholders(TemplateKind kind) {
    static const std::vector<std::string> feedback{"query", "answer", "criteria"};
    static const std::vector<std::string> refine{"query", "answer", "feedback"};
    static const std::vector<std::string> judge{"query", "answer_a", "answer_b", "criteria"};
    static const std::vector<std::string> grade{"query", "answer", "criteria"};
    static const std::vector<std::string> select{"query", "candidates", "criteria"};
    switch (kind) {
        case TemplateKind::feedback: return feedback;
        case TemplateKind::refine: return refine;
        case TemplateKind::judge: return judge;
        case TemplateKind::grade: return grade;
        case TemplateKind::select: return select;
    }
    return feedback;
}

const std::vector<std::string>& optional_placeholders(TemplateKind kind) {
    static const std::vector<std::string> none;
    static const std::vector<std::string> refine{"criteria"};
    return kind == TemplateKind::refine ? refine : none;
}

void check_template(const PromptTemplate& tmpl) {
    std::map<std::string, int, std::less<>> counts;
    scan(
        tmpl.body, [](std::string_view) {}, [&](std::string_view name) { ++counts[std::string(name)]; });

    const auto& required = required_placeholders(tmpl.kind);
    const auto& optional = optional_placeholders(tmpl.kind);
    const std::string kind(to_string(tmpl.kind));
    for (const auto& name : required) {
        const int n = counts.count(name) ? counts.at(name) : 0;
        if (n != 1) {
            throw MissingPlaceholder(kind + " template must contain {" + name + "} exactly once (found " +
                                     std::to_string(n) + ")");
        }
    }
    for (const auto& [name, n] : counts) {
        const bool is_required = std::find(required.begin(), required.end(), name) != required.end();
        const bool is_optional = std::find(optional.begin(), optional.end(), name) != optional.end();
        if (!is_required && !is_optional) {
            throw MissingPlaceholder(kind + " template contains foreign placeholder {" + name + "}");
        }
        if (is_optional && n > 1) {
            throw MissingPlaceholder(kind + " template repeats {" + name + "}");
        }
    }
}

PromptTemplate default_template(TemplateKind kind) {
    PromptTemplate t;
    t.kind = kind;
    t.version = "v1";
    switch (kind) {
        case TemplateKind::feedback: t.body = kFeedbackBody; break;
        case TemplateKind::refine: t.body = kRefineBody; break;
        case TemplateKind::judge: t.body = kJudgeBody; break;
        case TemplateKind::grade: t.body = kGradeBody; break;
        case TemplateKind::select: t.body = kSelectBody; break;
    }
    return t;
}

PromptTemplate parse_template_file(std::string_view contents) {
    const auto eol = contents.find('\n');
    const auto header = trim(contents.substr(0, eol));
    constexpr std::string_view prefix = "# template:";
    if (header.rfind(prefix, 0) != 0) {
        throw TemplateLoadError("template header must start with '# template:'");
    }
    std::istringstream fields(header.substr(prefix.size()));
    std::string kind_name;
    std::string version;
    fields >> kind_name >> version;
    const auto kind = parse_template_kind(kind_name);
    if (!kind) throw TemplateLoadError("unknown template kind '" + kind_name + "'");
    if (version.empty()) throw TemplateLoadError("template header lacks a version");

    PromptTemplate t{*kind, version,
                     eol == std::string_view::npos ? std::string() : std::string(contents.substr(eol + 1))};
    check_template(t);
    return t;
}

PromptTemplate load_template_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateLoadError("cannot read template " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_template_file(buf.str());
}

std::string format_template_file(const PromptTemplate& tmpl) {
    return "# template: " + std::string(to_string(tmpl.kind)) + " " + tmpl.version + "\n" + tmpl.body;
}

std::string template_file_name(TemplateKind kind) { return std::string(to_string(kind)) + ".tmpl"; }

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw TemplateLoadError("template directory " + dir.string() + " does not exist");
    }
    TemplateSet set;
    for (PromptTemplate* slot : {&set.feedback, &set.refine, &set.judge, &set.grade, &set.select}) {
        const auto path = dir / template_file_name(slot->kind);
        if (!std::filesystem::exists(path)) continue;
        auto loaded = load_template_file(path);
        if (loaded.kind != slot->kind) {
            throw TemplateLoadError(path.string() + " declares kind " + std::string(to_string(loaded.kind)));
        }
        *slot = std::move(loaded);
    }
    return set;
}

std::vector<std::pair<std::string, std::string>> TemplateSet::versions() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const PromptTemplate* t : {&feedback, &refine, &judge, &grade, &select}) {
        out.emplace_back(std::string(to_string(t->kind)), t->version);
    }
    return out;
}

std::string render_feedback(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                            const CriteriaSet& criteria) {
    expect_kind(tmpl, TemplateKind::feedback);
    return substitute(tmpl, {{"query", std::string(query)},
                             {"answer", std::string(answer)},
                             {"criteria", criteria.render()}});
}

std::string render_refine(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                          std::string_view feedback, const CriteriaSet& criteria) {
    expect_kind(tmpl, TemplateKind::refine);
    if (is_blank(feedback)) throw FeedbackEmpty("refinement requires non-empty feedback");
    return substitute(tmpl, {{"query", std::string(query)},
                             {"answer", std::string(answer)},
                             {"feedback", std::string(feedback)},
                             {"criteria", criteria.render()}});
}

std::string render_judge(const PromptTemplate& tmpl, std::string_view query, std::string_view answer_a,
                         std::string_view answer_b, const CriteriaSet& criteria) {
    expect_kind(tmpl, TemplateKind::judge);
    return substitute(tmpl, {{"query", std::string(query)},
                             {"answer_a", answer_block('A', answer_a)},
                             {"answer_b", answer_block('B', answer_b)},
                             {"criteria", criteria.render()}});
}

std::string render_grade(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                         const CriteriaSet& criteria) {
    expect_kind(tmpl, TemplateKind::grade);
    return substitute(tmpl, {{"query", std::string(query)},
                             {"answer", std::string(answer)},
                             {"criteria", criteria.render()}});
}

std::string render_select(const PromptTemplate& tmpl, std::string_view query,
                          const std::vector<std::string>& candidates, const CriteriaSet& criteria) {
    expect_kind(tmpl, TemplateKind::select);
    std::string block;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i != 0) block += "\n\n";
        const auto n = std::to_string(i + 1);
        block += "[Candidate " + n + "]\n" + candidates[i] + "\n[End of Candidate " + n + "]";
    }
    return substitute(tmpl, {{"query", std::string(query)},
                             {"candidates", block},
                             {"criteria", criteria.render()}});
}

std::string answer_block(char slot, std::string_view text) {
    const std::string label(1, slot);
    return "[Answer " + label + "]\n" + std::string(text) + "\n[End of Answer " + label + "]";
}

std::optional<std::pair<std::string, std::string>> extract_judge_answers(std::string_view prompt) {
    auto extract = [&](char slot, std::size_t from) -> std::optional<std::pair<std::string, std::size_t>> {
        const std::string open = std::string("[Answer ") + slot + "]\n";
        const std::string close = std::string("\n[End of Answer ") + slot + "]";
        const auto b = prompt.find(open, from);
        if (b == std::string_view::npos) return std::nullopt;
        const auto body = b + open.size();
        const auto e = prompt.find(close, body);
        if (e == std::string_view::npos) return std::nullopt;
        return std::make_pair(std::string(prompt.substr(body, e - body)), e + close.size());
    };
    const auto a = extract('A', 0);
    if (!a) return std::nullopt;
    const auto b = extract('B', a->second);
    if (!b) return std::nullopt;
    return std::make_pair(a->first, b->first);
}

}  // namespace prefchain
