#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "prefchain/errors.hpp"
#include "prefchain/prompts.hpp"
#include "test_support.hpp"

using namespace prefchain;
using prefchain::testing::TempDir;
using prefchain::testing::read_file;
using prefchain::testing::write_file;

namespace {

PromptTemplate make(TemplateKind kind, std::string body) { return PromptTemplate{kind, "t1", std::move(body)}; }

CriteriaSet accuracy_only() { return CriteriaSet(std::vector<Criterion>{{"accuracy", "factually correct"}}); }

// Compares against tests/golden/<name>; PREFCHAIN_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::string& actual) {
    const auto path = prefchain::testing::data_dir() / "golden" / name;
    if (const char* update = std::getenv("PREFCHAIN_UPDATE_GOLDEN"); update != nullptr && std::string(update) == "1") {
        write_file(path, actual);
    }
    ASSERT_TRUE(std::filesystem::exists(path)) << path;
    EXPECT_EQ(read_file(path), actual) << "golden mismatch for " << name;
}

}  // namespace

TEST(Criteria, DefaultsAreTheFiveStandardOnes) {
    const auto c = CriteriaSet::defaults();
    ASSERT_EQ(c.size(), 5u);
    const std::vector<std::string> names{"accuracy", "completeness", "clarity", "conciseness", "relevance"};
    for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(c.items()[i].name, names[i]);

    const auto rendered = c.render();
    EXPECT_EQ(std::count(rendered.begin(), rendered.end(), '\n'), 4);
    EXPECT_EQ(rendered.rfind("1. accuracy: ", 0), 0u);
    EXPECT_NE(rendered.find("\n5. relevance: "), std::string::npos);
}

TEST(Criteria, NamesAreNormalisedAndValidated) {
    const CriteriaSet c(std::vector<Criterion>{{"  Accuracy ", " correct "}});
    EXPECT_EQ(c.items()[0].name, "accuracy");
    EXPECT_EQ(c.items()[0].description, "correct");
    EXPECT_TRUE(c.contains("ACCURACY"));
    EXPECT_THROW(CriteriaSet(std::vector<Criterion>{}), InvalidCriteria);
    EXPECT_THROW(CriteriaSet(std::vector<Criterion>{{" ", "x"}}), InvalidCriteria);
    EXPECT_THROW(CriteriaSet(std::vector<Criterion>{{"a", "x"}, {"A", "y"}}), InvalidCriteria);
    EXPECT_EQ(CriteriaSet(std::vector<Criterion>{{"brevity", ""}}).render(), "1. brevity");
}

TEST(Render, FeedbackExample) {
    const auto t = make(TemplateKind::feedback, "Q:{query} A:{answer} C:{criteria}");
    EXPECT_EQ(render_feedback(t, "q", "a", accuracy_only()), "Q:q A:a C:1. accuracy: factually correct");
}

TEST(Render, SubstitutedTextIsNeverRescanned) {
    const auto t = make(TemplateKind::feedback, "Q:{query} A:{answer} C:{criteria}");
    EXPECT_EQ(render_feedback(t, "{answer}", "{query} and {criteria}", accuracy_only()),
              "Q:{answer} A:{query} and {criteria} C:1. accuracy: factually correct");
}

TEST(Render, InjectionGuardOnRandomBraceText) {
    const auto t = make(TemplateKind::refine, "<{query}|{answer}|{feedback}>");
    const std::string alphabet = "{}abqueryanswrfdk _";
    std::mt19937_64 rng(12);
    auto gen = [&] {
        std::string s;
        const auto n = 1 + rng() % 30;
        for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
        return s;
    };
    for (int i = 0; i < 500; ++i) {
        const auto q = gen();
        const auto a = gen();
        const auto f = "x" + gen();
        ASSERT_EQ(render_refine(t, q, a, f), "<" + q + "|" + a + "|" + f + ">");
    }
}

TEST(Render, UnknownBraceGroupsAreLiteral) {
    const auto t = make(TemplateKind::feedback, "{json} {query} {answer} {criteria} {}");
    EXPECT_EQ(render_feedback(t, "q", "a", accuracy_only()), "{json} q a 1. accuracy: factually correct {}");
}

TEST(Render, RefineRequiresFeedback) {
    const auto t = default_template(TemplateKind::refine);
    EXPECT_THROW(render_refine(t, "q", "a", ""), FeedbackEmpty);
    EXPECT_THROW(render_refine(t, "q", "a", " \n\t"), FeedbackEmpty);
    EXPECT_NO_THROW(render_refine(t, "q", "a", "be shorter"));
}

TEST(Render, RefineCriteriaIsOptional) {
    const auto without = make(TemplateKind::refine, "{query}/{answer}/{feedback}");
    EXPECT_EQ(render_refine(without, "q", "a", "f"), "q/a/f");
    const auto with = make(TemplateKind::refine, "{query}/{answer}/{feedback}/{criteria}");
    EXPECT_EQ(render_refine(with, "q", "a", "f", accuracy_only()), "q/a/f/1. accuracy: factually correct");
}

TEST(Render, KindMismatchIsRejected) {
    EXPECT_THROW(render_feedback(default_template(TemplateKind::judge), "q", "a", accuracy_only()), MissingPlaceholder);
}

TEST(Render, DefaultFeedbackListsAllCriteria) {
    const auto defaults = CriteriaSet::defaults();
    const auto out = render_feedback(default_template(TemplateKind::feedback), "q", "a", defaults);
    for (const auto& c : defaults.items()) {
        EXPECT_NE(out.find(c.name + ": " + c.description), std::string::npos) << c.name;
    }
}

TEST(JudgePrompt, SwapSymmetry) {
    const auto t = default_template(TemplateKind::judge);
    const auto c = CriteriaSet::defaults();
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const auto x = "first answer " + std::to_string(rng() % 1000) + " {answer_b}";
        const auto y = "second answer " + std::to_string(rng() % 1000);
        const auto forward = render_judge(t, "question", x, y, c);
        const auto swapped = render_judge(t, "question", y, x, c);
        ASSERT_EQ(extract_judge_answers(forward), std::make_pair(x, y));
        ASSERT_EQ(extract_judge_answers(swapped), std::make_pair(y, x));
        // Nothing but the two bodies moves between the arrangements.
        auto neutral = [&](std::string s, const std::string& a, const std::string& b) {
            s.replace(s.find(answer_block('A', a)), answer_block('A', a).size(), "<A>");
            s.replace(s.find(answer_block('B', b)), answer_block('B', b).size(), "<B>");
            return s;
        };
        ASSERT_EQ(neutral(forward, x, y), neutral(swapped, y, x));
    }
}

TEST(JudgePrompt, IdenticalAnswersGiveIdenticalBlocks) {
    const auto out = render_judge(default_template(TemplateKind::judge), "q", "same", "same", CriteriaSet::defaults());
    const auto answers = extract_judge_answers(out);
    ASSERT_TRUE(answers.has_value());
    EXPECT_EQ(answers->first, answers->second);
}

TEST(JudgePrompt, ExtractFailsWithoutBlocks) {
    EXPECT_FALSE(extract_judge_answers("no blocks here").has_value());
    EXPECT_FALSE(extract_judge_answers(answer_block('A', "only a")).has_value());
}

TEST(Select, CandidatesAreNumbered) {
    const auto out = render_select(default_template(TemplateKind::select), "q", {"x", "y", "z"}, CriteriaSet::defaults());
    EXPECT_NE(out.find("[Candidate 1]\nx\n[End of Candidate 1]"), std::string::npos);
    EXPECT_NE(out.find("[Candidate 3]\nz\n[End of Candidate 3]"), std::string::npos);
}

TEST(Templates, RequiredPlaceholdersAreChecked) {
    EXPECT_THROW(check_template(make(TemplateKind::feedback, "{query} {criteria}")), MissingPlaceholder);
    EXPECT_THROW(check_template(make(TemplateKind::feedback, "{query} {answer} {answer} {criteria}")),
                 MissingPlaceholder);
    EXPECT_THROW(check_template(make(TemplateKind::feedback, "{query} {answer} {criteria} {feedback}")),
                 MissingPlaceholder);
    EXPECT_THROW(check_template(make(TemplateKind::judge, "{query} {answer_a} {criteria}")), MissingPlaceholder);
    EXPECT_THROW(check_template(make(TemplateKind::refine, "{query}{answer}{feedback}{criteria}{criteria}")),
                 MissingPlaceholder);
    for (auto kind : {TemplateKind::feedback, TemplateKind::refine, TemplateKind::judge, TemplateKind::grade,
                      TemplateKind::select}) {
        EXPECT_NO_THROW(check_template(default_template(kind))) << to_string(kind);
    }
}

TEST(Templates, FileRoundTrip) {
    for (auto kind : {TemplateKind::feedback, TemplateKind::refine, TemplateKind::judge, TemplateKind::grade,
                      TemplateKind::select}) {
        const auto t = default_template(kind);
        EXPECT_EQ(parse_template_file(format_template_file(t)), t);
    }
}

TEST(Templates, FileErrors) {
    EXPECT_THROW(parse_template_file("no header\n{query}"), TemplateLoadError);
    EXPECT_THROW(parse_template_file("# template: bogus v1\n"), TemplateLoadError);
    EXPECT_THROW(parse_template_file("# template: feedback\n{query}{answer}{criteria}"), TemplateLoadError);
    EXPECT_THROW(parse_template_file("# template: feedback v2\n{query}{criteria}"), MissingPlaceholder);
    EXPECT_THROW(load_template_file("/nonexistent/feedback.tmpl"), TemplateLoadError);
}

TEST(Templates, DirectoryOverridesAndFallsBack) {
    TempDir dir;
    write_file(dir / "judge.tmpl", "# template: judge v7\nJ {query} {answer_a} {answer_b} {criteria}");
    const auto set = TemplateSet::load_dir(dir.path());
    EXPECT_EQ(set.judge.version, "v7");
    EXPECT_EQ(set.feedback, default_template(TemplateKind::feedback));
    const auto versions = set.versions();
    ASSERT_EQ(versions.size(), 5u);
    EXPECT_EQ(versions[2], std::make_pair(std::string("judge"), std::string("v7")));

    write_file(dir / "refine.tmpl", "# template: judge v1\n{query} {answer_a} {answer_b} {criteria}");
    EXPECT_THROW(TemplateSet::load_dir(dir.path()), TemplateLoadError);
    EXPECT_THROW(TemplateSet::load_dir(dir / "missing"), TemplateLoadError);
}

TEST(Templates, ShippedFilesMatchBuiltIns) {
    const auto dir = prefchain::testing::data_dir().parent_path() / "templates";
    const auto set = TemplateSet::load_dir(dir);
    EXPECT_EQ(set.feedback, default_template(TemplateKind::feedback));
    EXPECT_EQ(set.refine, default_template(TemplateKind::refine));
    EXPECT_EQ(set.judge, default_template(TemplateKind::judge));
    EXPECT_EQ(set.grade, default_template(TemplateKind::grade));
    EXPECT_EQ(set.select, default_template(TemplateKind::select));
}

TEST(Golden, DefaultTemplatesRenderStably) {
    const auto c = CriteriaSet::defaults();
    const std::string q = "Which is the largest planet in the solar system?";
    const std::string a = "Saturn is the largest planet.";
    const std::string b = "Jupiter is the largest planet; it is more massive than all others combined.";
    expect_golden("feedback.txt", render_feedback(default_template(TemplateKind::feedback), q, a, c));
    expect_golden("refine.txt", render_refine(default_template(TemplateKind::refine), q, a,
                                              "Accuracy: Saturn is wrong; the answer is Jupiter.", c));
    expect_golden("judge.txt", render_judge(default_template(TemplateKind::judge), q, a, b, c));
    expect_golden("grade.txt", render_grade(default_template(TemplateKind::grade), q, b, c));
    expect_golden("select.txt", render_select(default_template(TemplateKind::select), q, {a, b}, c));
}
