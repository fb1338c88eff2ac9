#pragma once

// Prompt templates for the feedback, refinement and judgment calls, plus the
// auxiliary grading and best-of-n selection prompts.
//
// Templates carry named placeholders such as {query} or {answer}. Rendering is
// a single left-to-right pass: text substituted into a placeholder is never
// scanned again, so braces inside user data are emitted verbatim.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prefchain {

struct Criterion {
    std::string name;
    std::string description;

    bool operator==(const Criterion&) const = default;
};

class CriteriaSet {
public:
    // Names are trimmed and lowercased; throws InvalidCriteria on empty or
    // duplicate names, or on an empty list.
    explicit CriteriaSet(std::vector<Criterion> criteria);

    // accuracy, completeness, clarity, conciseness, relevance
    static CriteriaSet defaults();

    const std::vector<Criterion>& items() const { return criteria_; }
    std::size_t size() const { return criteria_.size(); }
    bool contains(std::string_view name) const;

    // "1. name: description" lines joined by '\n'.
    std::string render() const;

    bool operator==(const CriteriaSet&) const = default;

private:
    std::vector<Criterion> criteria_;
};

enum class TemplateKind { feedback, refine, judge, grade, select };

std::string_view to_string(TemplateKind kind);
std::optional<TemplateKind> parse_template_kind(std::string_view s);

struct PromptTemplate {
    TemplateKind kind = TemplateKind::feedback;
    std::string version;
    std::string body;

    bool operator==(const PromptTemplate&) const = default;
};

// Placeholders that must appear exactly once for `kind`.
const std::vector<std::string>& required_placeholders(TemplateKind kind);
// Placeholders that may appear at most once for `kind` without being required.
const std::vector<std::string>& optional_placeholders(TemplateKind kind);

// Throws MissingPlaceholder if a required placeholder is absent or repeated,
// or a placeholder foreign to the kind is present.
void check_template(const PromptTemplate& tmpl);

// Built-in templates, version "v1".
PromptTemplate default_template(TemplateKind kind);

// Template file format: a first line "# template: <kind> <version>", then the
// body verbatim.
PromptTemplate parse_template_file(std::string_view contents);
PromptTemplate load_template_file(const std::filesystem::path& path);
std::string format_template_file(const PromptTemplate& tmpl);
std::string template_file_name(TemplateKind kind);

// One template per kind. Loading a directory reads "<kind>.tmpl" for each kind
// and falls back to the built-in default for files that do not exist.
struct TemplateSet {
    PromptTemplate feedback = default_template(TemplateKind::feedback);
    PromptTemplate refine = default_template(TemplateKind::refine);
    PromptTemplate judge = default_template(TemplateKind::judge);
    PromptTemplate grade = default_template(TemplateKind::grade);
    PromptTemplate select = default_template(TemplateKind::select);

    static TemplateSet load_dir(const std::filesystem::path& dir);
    // kind -> version, for traceability of curated records.
    std::vector<std::pair<std::string, std::string>> versions() const;
};

std::string render_feedback(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                            const CriteriaSet& criteria);

// Throws FeedbackEmpty when `feedback` is blank.
std::string render_refine(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                          std::string_view feedback,
                          const CriteriaSet& criteria = CriteriaSet::defaults());

std::string render_judge(const PromptTemplate& tmpl, std::string_view query, std::string_view answer_a,
                         std::string_view answer_b, const CriteriaSet& criteria);

std::string render_grade(const PromptTemplate& tmpl, std::string_view query, std::string_view answer,
                         const CriteriaSet& criteria);

std::string render_select(const PromptTemplate& tmpl, std::string_view query,
                          const std::vector<std::string>& candidates, const CriteriaSet& criteria);

// Labelled blocks that carry the two answers inside a judge prompt.
std::string answer_block(char slot, std::string_view text);

// Recovers the two answer bodies from a rendered judge prompt.
std::optional<std::pair<std::string, std::string>> extract_judge_answers(std::string_view prompt);

}  // namespace prefchain
