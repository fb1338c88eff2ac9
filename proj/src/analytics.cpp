#include "prefchain/analytics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "prefchain/dataset.hpp"
#include "prefchain/errors.hpp"
#include "prefchain/workers.hpp"

namespace prefchain {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::size_t draw(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool coin(std::mt19937_64& rng) { return std::uniform_int_distribution<int>(0, 1)(rng) == 1; }

struct VoteTally {
    std::size_t incumbent = 0;
    std::size_t candidate = 0;
    std::size_t neither = 0;

    void add(Side s) {
        if (s == Side::incumbent) ++incumbent;
        else if (s == Side::candidate) ++candidate;
        else ++neither;
    }
};

void tally_calls(VoteTally& t, const Verdict& first, const std::optional<Verdict>& second) {
    t.add(side_in_first_arrangement(first.preferred));
    if (second) t.add(side_in_second_arrangement(second->preferred));
}

VoteTally tally(const DebiasedVerdict& v) {
    VoteTally t;
    tally_calls(t, v.first_call, v.second_call);
    for (const auto& p : v.panel) tally_calls(t, p.first_call, p.second_call);
    return t;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<AnswerSample> samples(const std::vector<PreferenceChain>& chains, bool final) {
    std::vector<AnswerSample> out;
    out.reserve(chains.size());
    for (const auto& c : chains) {
        if (c.answers.empty()) continue;
        AnswerSample s;
        s.id = c.record_id;
        s.query = c.query;
        s.text = final ? c.final_answer().text : c.answers.front().text;
        if (auto it = c.metadata.find("gold"); it != c.metadata.end()) s.gold = it->second;
        out.push_back(std::move(s));
    }
    return out;
}

double percent(std::size_t part, std::size_t whole) {
    return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

}  // namespace

// ---------------------------------------------------------------------------
// Histogram

Histogram chain_length_histogram(const std::vector<PreferenceChain>& chains) {
    Histogram h;
    for (const auto& c : chains) ++h[c.answers.size()];
    return h;
}

Histogram chain_length_histogram(const fs::path& store) {
    Histogram h;
    ChainReader reader(store);
    while (auto c = reader.next()) ++h[c->answers.size()];
    return h;
}

// ---------------------------------------------------------------------------
// Win matrix

WinMatrix build_win_matrix(const std::vector<PreferenceChain>& chains, const PairwiseJudge& judge,
                           const WinMatrixOptions& options) {
    if (options.depth < 2) throw ConfigError("win matrix depth must be >= 2");
    if (options.trials_per_cell < 1) throw ConfigError("trials_per_cell must be >= 1");

    const std::size_t d = options.depth;
    WinMatrix m;
    m.depth = d;
    m.cells.assign(d, std::vector<WinCell>(d));
    for (std::size_t i = 0; i < d; ++i) m.cells[i][i].fraction = 0.5;

    // eligible[j]: chains containing Ans_j.
    std::vector<std::vector<std::size_t>> eligible(d);
    for (std::size_t c = 0; c < chains.size(); ++c) {
        for (std::size_t j = 0; j < d && j < chains[c].answers.size(); ++j) eligible[j].push_back(c);
    }

    struct Trial {
        std::size_t i, j, chain;
        ArrangementOrder order;
    };
    std::vector<Trial> trials;
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            if (eligible[j].empty()) continue;
            for (std::size_t t = 0; t < options.trials_per_cell; ++t) {
                const std::size_t chain = eligible[j][draw(rng, eligible[j].size())];
                const auto order = coin(rng) ? ArrangementOrder::candidate_first : ArrangementOrder::incumbent_first;
                trials.push_back({i, j, chain, order});
            }
        }
    }
    if (trials.empty()) {
        throw InsufficientData("no chain reaches depth 2; the win matrix has no cells");
    }

    std::vector<VoteTally> results(trials.size());
    run_bounded(trials.size(), options.parallelism, [&](std::size_t k) {
        const auto& t = trials[k];
        const auto& chain = chains[t.chain];
        results[k] = tally(judge.judge_pair(chain.query, chain.answers[t.i], chain.answers[t.j], t.order));
    });

    for (std::size_t k = 0; k < trials.size(); ++k) {
        auto& cell = m.cells[trials[k].i][trials[k].j];
        cell.row_wins += results[k].incumbent;
        cell.col_wins += results[k].candidate;
        cell.ties += results[k].neither;
        ++cell.trials;
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            auto& up = m.cells[i][j];
            auto& down = m.cells[j][i];
            down.row_wins = up.col_wins;
            down.col_wins = up.row_wins;
            down.ties = up.ties;
            down.trials = up.trials;
            if (up.decisive() > 0) {
                const double total = static_cast<double>(up.decisive());
                up.fraction = static_cast<double>(up.col_wins) / total;
                down.fraction = static_cast<double>(up.row_wins) / total;
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Consistency

std::optional<double> AgreementStats::agreement() const {
    if (judgments == 0) return std::nullopt;
    return static_cast<double>(agree) / static_cast<double>(judgments);
}

std::optional<double> AgreementStats::agreement_excluding_ties() const {
    const std::size_t decisive = agree + disagree;
    if (decisive == 0) return std::nullopt;
    return static_cast<double>(agree) / static_cast<double>(decisive);
}

ConsistencyReport consistency_experiment(const std::vector<PreferenceChain>& chains, const PairwiseJudge& judge,
                                         const ConsistencyOptions& options) {
    if (options.repeats < 1) throw ConfigError("repeats must be >= 1");

    // One task per (pair, repeat). depth == npos marks the terminal pair.
    constexpr std::size_t kTerminal = static_cast<std::size_t>(-1);
    struct Task {
        const PreferenceChain* chain;
        std::size_t depth;
        bool swap;
    };
    std::vector<Task> tasks;
    ConsistencyReport report;
    report.repeats = options.repeats;
    std::mt19937_64 rng(options.seed);

    for (const auto& c : chains) {
        for (std::size_t t = 0; t + 1 < c.answers.size(); ++t) {
            ++report.per_depth[t].pairs;
            for (std::size_t r = 0; r < options.repeats; ++r) tasks.push_back({&c, t, coin(rng)});
        }
        if (c.rejected_candidate && !c.answers.empty()) {
            ++report.terminal.pairs;
            for (std::size_t r = 0; r < options.repeats; ++r) tasks.push_back({&c, kTerminal, coin(rng)});
        }
    }

    // Side of the expected winner the judge took: +1 agree, -1 disagree, 0 tie.
    std::vector<int> results(tasks.size());
    run_bounded(tasks.size(), options.parallelism, [&](std::size_t k) {
        const auto& task = tasks[k];
        const auto& c = *task.chain;
        const bool terminal = task.depth == kTerminal;
        const Answer& earlier = terminal ? c.answers.back() : c.answers[task.depth];
        const Answer& later = terminal ? *c.rejected_candidate : c.answers[task.depth + 1];
        const Answer& expected = terminal ? earlier : later;

        const Answer& a = task.swap ? later : earlier;
        const Answer& b = task.swap ? earlier : later;
        const auto judged = judge.judge_single(c.query, a.text, b.text);
        if (judged.preferred == Preference::tie) {
            results[k] = 0;
            return;
        }
        const Answer& picked = judged.preferred == Preference::A ? a : b;
        results[k] = (&picked == &expected) ? 1 : -1;
    });

    for (std::size_t k = 0; k < tasks.size(); ++k) {
        auto& stats = tasks[k].depth == kTerminal ? report.terminal : report.per_depth[tasks[k].depth];
        ++stats.judgments;
        if (results[k] > 0) ++stats.agree;
        else if (results[k] < 0) ++stats.disagree;
        else ++stats.ties;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Robustness

std::string_view to_string(RobustnessMetric m) {
    switch (m) {
        case RobustnessMetric::binary_accuracy: return "binary_accuracy";
        case RobustnessMetric::mean_token_length: return "mean_token_length";
        case RobustnessMetric::mean_judge_score: return "mean_judge_score";
    }
    return "unknown";
}

std::optional<RobustnessMetric> parse_robustness_metric(std::string_view s) {
    if (s == "binary_accuracy" || s == "accuracy") return RobustnessMetric::binary_accuracy;
    if (s == "mean_token_length" || s == "length") return RobustnessMetric::mean_token_length;
    if (s == "mean_judge_score" || s == "score") return RobustnessMetric::mean_judge_score;
    return std::nullopt;
}

std::vector<AnswerSample> initial_answers(const std::vector<PreferenceChain>& chains) {
    return samples(chains, false);
}

std::vector<AnswerSample> final_answers(const std::vector<PreferenceChain>& chains) { return samples(chains, true); }

bool gold_matches(std::string_view answer, std::string_view gold, GoldMatch match) {
    if (match == GoldMatch::exact) return lower(trim(answer)) == lower(trim(gold));
    const auto hay = words(answer);
    const auto needle = words(gold);
    if (needle.empty()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

RobustnessResult robustness_delta(const std::vector<AnswerSample>& before, const std::vector<AnswerSample>& after,
                                  RobustnessMetric metric, const PairwiseJudge* judge, GoldMatch match) {
    if (metric == RobustnessMetric::mean_judge_score && judge == nullptr) {
        throw ConfigError("mean_judge_score needs a judge");
    }
    std::unordered_map<std::string, const AnswerSample*> after_by_id;
    for (const auto& s : after) after_by_id.emplace(s.id, &s);

    RobustnessResult r;
    r.metric = metric;
    std::vector<std::pair<const AnswerSample*, const AnswerSample*>> pairs;
    for (const auto& s : before) {
        auto it = after_by_id.find(s.id);
        if (it == after_by_id.end()) {
            ++r.unmatched;
            continue;
        }
        pairs.emplace_back(&s, it->second);
        after_by_id.erase(it);
    }
    r.unmatched += after_by_id.size();
    r.matched = pairs.size();
    if (pairs.empty()) throw InsufficientData("before and after sets share no record id");

    double sum_before = 0.0;
    double sum_after = 0.0;
    for (const auto& [b, a] : pairs) {
        RecordMetric rec{b->id, 0.0, 0.0};
        switch (metric) {
            case RobustnessMetric::binary_accuracy: {
                const auto& gold = b->gold ? b->gold : a->gold;
                if (!gold) throw MissingGold("record " + b->id + " has no gold label");
                rec.before = gold_matches(b->text, *gold, match) ? 1.0 : 0.0;
                rec.after = gold_matches(a->text, *gold, match) ? 1.0 : 0.0;
                break;
            }
            case RobustnessMetric::mean_token_length:
                rec.before = static_cast<double>(canonical_token_count(b->text));
                rec.after = static_cast<double>(canonical_token_count(a->text));
                break;
            case RobustnessMetric::mean_judge_score:
                rec.before = judge->grade(b->query, b->text);
                rec.after = judge->grade(b->query, a->text);
                break;
        }
        sum_before += rec.before;
        sum_after += rec.after;
        r.per_record.push_back(std::move(rec));
    }

    const double n = static_cast<double>(pairs.size());
    if (metric == RobustnessMetric::binary_accuracy) {
        r.before = 100.0 * sum_before / n;
        r.after = 100.0 * sum_after / n;
        r.delta = r.after - r.before;
    } else {
        r.before = sum_before / n;
        r.after = sum_after / n;
        if (r.before != 0.0) r.delta = 100.0 * (r.after - r.before) / r.before;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Head to head

double HeadToHeadReport::a_win_percent() const { return percent(a_wins, pairs); }
double HeadToHeadReport::b_win_percent() const { return percent(b_wins, pairs); }
double HeadToHeadReport::tie_percent() const { return percent(ties, pairs); }

HeadToHeadReport head_to_head(const std::vector<PreferenceChain>& a, const std::vector<PreferenceChain>& b,
                              const PairwiseJudge& judge, std::uint64_t seed, std::size_t parallelism) {
    std::unordered_map<std::string, const PreferenceChain*> b_by_id;
    for (const auto& c : b) b_by_id.emplace(c.record_id, &c);

    HeadToHeadReport report;
    struct Match {
        const PreferenceChain* a;
        const PreferenceChain* b;
        ArrangementOrder order;
    };
    std::vector<Match> matches;
    std::mt19937_64 rng(seed);
    for (const auto& c : a) {
        auto it = b_by_id.find(c.record_id);
        if (it == b_by_id.end() || c.answers.empty() || it->second->answers.empty()) {
            ++report.unmatched;
            continue;
        }
        matches.push_back({&c, it->second,
                           coin(rng) ? ArrangementOrder::candidate_first : ArrangementOrder::incumbent_first});
        b_by_id.erase(it);
    }
    report.unmatched += b_by_id.size();

    // A's answer is the candidate: candidate_wins means A won.
    std::vector<PairOutcome> outcomes(matches.size());
    run_bounded(matches.size(), parallelism, [&](std::size_t k) {
        const auto& m = matches[k];
        outcomes[k] = judge.judge_pair(m.a->query, m.b->final_answer(), m.a->final_answer(), m.order).outcome;
    });
    for (auto o : outcomes) {
        ++report.pairs;
        if (o == PairOutcome::candidate_wins) ++report.a_wins;
        else if (o == PairOutcome::incumbent_wins) ++report.b_wins;
        else ++report.ties;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report files

ordered_json to_json(const Histogram& h) {
    ordered_json j;
    std::size_t total = 0;
    auto counts = ordered_json::object();
    for (const auto& [len, n] : h) {
        counts[std::to_string(len)] = n;
        total += n;
    }
    j["report"] = "histogram";
    j["counts"] = std::move(counts);
    j["total"] = total;
    return j;
}

ordered_json to_json(const WinMatrix& m) {
    ordered_json j;
    j["report"] = "win_matrix";
    j["depth"] = m.depth;
    auto cells = ordered_json::array();
    for (std::size_t i = 0; i < m.depth; ++i) {
        for (std::size_t k = 0; k < m.depth; ++k) {
            const auto& c = m.cells[i][k];
            ordered_json cell;
            cell["i"] = i;
            cell["j"] = k;
            cell["fraction"] = opt_json(c.fraction);
            cell["row_wins"] = c.row_wins;
            cell["col_wins"] = c.col_wins;
            cell["ties"] = c.ties;
            cell["trials"] = c.trials;
            cells.push_back(std::move(cell));
        }
    }
    j["cells"] = std::move(cells);
    return j;
}

namespace {

ordered_json stats_json(const AgreementStats& s) {
    ordered_json j;
    j["pairs"] = s.pairs;
    j["judgments"] = s.judgments;
    j["agree"] = s.agree;
    j["disagree"] = s.disagree;
    j["ties"] = s.ties;
    j["agreement"] = opt_json(s.agreement());
    j["agreement_excluding_ties"] = opt_json(s.agreement_excluding_ties());
    return j;
}

std::string stats_csv_row(const std::string& depth, const AgreementStats& s) {
    std::ostringstream os;
    os << depth << ',' << s.pairs << ',' << s.judgments << ',' << s.agree << ',' << s.disagree << ',' << s.ties << ','
       << fmt(s.agreement()) << ',' << fmt(s.agreement_excluding_ties()) << '\n';
    return os.str();
}

}  // namespace

ordered_json to_json(const ConsistencyReport& r) {
    ordered_json j;
    j["report"] = "consistency";
    j["repeats"] = r.repeats;
    auto depths = ordered_json::array();
    for (const auto& [t, s] : r.per_depth) {
        auto row = stats_json(s);
        row["depth"] = t;
        depths.push_back(std::move(row));
    }
    j["per_depth"] = std::move(depths);
    j["terminal"] = stats_json(r.terminal);
    return j;
}

ordered_json to_json(const RobustnessResult& r) {
    ordered_json j;
    j["report"] = "robustness";
    j["metric"] = to_string(r.metric);
    j["before"] = r.before;
    j["after"] = r.after;
    j["delta"] = opt_json(r.delta);
    j["delta_unit"] = r.metric == RobustnessMetric::binary_accuracy ? "points" : "percent";
    j["matched"] = r.matched;
    j["unmatched"] = r.unmatched;
    auto rows = ordered_json::array();
    for (const auto& rec : r.per_record) {
        rows.push_back(ordered_json{{"id", rec.id}, {"before", rec.before}, {"after", rec.after}});
    }
    j["per_record"] = std::move(rows);
    return j;
}

ordered_json to_json(const HeadToHeadReport& r) {
    ordered_json j;
    j["report"] = "head_to_head";
    j["pairs"] = r.pairs;
    j["a_wins"] = r.a_wins;
    j["b_wins"] = r.b_wins;
    j["ties"] = r.ties;
    j["unmatched"] = r.unmatched;
    j["a_win_percent"] = r.a_win_percent();
    j["b_win_percent"] = r.b_win_percent();
    j["tie_percent"] = r.tie_percent();
    return j;
}

std::string to_csv(const Histogram& h) {
    std::ostringstream os;
    os << "answers,chains\n";
    for (const auto& [len, n] : h) os << len << ',' << n << '\n';
    return os.str();
}

std::string to_csv(const WinMatrix& m) {
    std::ostringstream os;
    os << "i,j,fraction,row_wins,col_wins,ties,trials\n";
    for (std::size_t i = 0; i < m.depth; ++i) {
        for (std::size_t k = 0; k < m.depth; ++k) {
            const auto& c = m.cells[i][k];
            os << i << ',' << k << ',' << fmt(c.fraction) << ',' << c.row_wins << ',' << c.col_wins << ','
               << c.ties << ',' << c.trials << '\n';
        }
    }
    return os.str();
}

std::string to_csv(const ConsistencyReport& r) {
    std::string out = "depth,pairs,judgments,agree,disagree,ties,agreement,agreement_excluding_ties\n";
    for (const auto& [t, s] : r.per_depth) out += stats_csv_row(std::to_string(t), s);
    out += stats_csv_row("terminal", r.terminal);
    return out;
}

std::string to_csv(const RobustnessResult& r) {
    std::ostringstream os;
    os << "id,before,after\n";
    for (const auto& rec : r.per_record) os << rec.id << ',' << fmt(rec.before) << ',' << fmt(rec.after) << '\n';
    os << "mean," << fmt(r.before) << ',' << fmt(r.after) << '\n';
    return os.str();
}

std::string to_csv(const HeadToHeadReport& r) {
    std::ostringstream os;
    os << "pairs,a_wins,b_wins,ties,a_win_percent,b_win_percent,tie_percent\n";
    os << r.pairs << ',' << r.a_wins << ',' << r.b_wins << ',' << r.ties << ',' << fmt(r.a_win_percent()) << ','
       << fmt(r.b_win_percent()) << ',' << fmt(r.tie_percent()) << '\n';
    return os.str();
}

std::string to_gnuplot(const Histogram& h) {
    std::ostringstream os;
    os << "# answers chains\n";
    for (const auto& [len, n] : h) os << len << ' ' << n << '\n';
    return os.str();
}

std::string to_gnuplot(const WinMatrix& m) {
    std::ostringstream os;
    os << "# row i, column j: win fraction of Ans_j over Ans_i\n";
    for (std::size_t i = 0; i < m.depth; ++i) {
        for (std::size_t k = 0; k < m.depth; ++k) {
            if (k > 0) os << ' ';
            os << (m.cells[i][k].fraction ? fmt(*m.cells[i][k].fraction) : std::string("nan"));
        }
        os << '\n';
    }
    return os.str();
}

std::string to_gnuplot(const ConsistencyReport& r) {
    std::ostringstream os;
    os << "# depth agreement agreement_excluding_ties\n";
    for (const auto& [t, s] : r.per_depth) {
        os << t << ' ' << (s.agreement() ? fmt(*s.agreement()) : "nan") << ' '
           << (s.agreement_excluding_ties() ? fmt(*s.agreement_excluding_ties()) : "nan") << '\n';
    }
    return os.str();
}

void write_report_files(const fs::path& dir, std::string_view stem, const ordered_json& json, const std::string& csv,
                        const std::optional<std::string>& gnuplot) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IOFailure("cannot create " + dir.string() + ": " + ec.message());
    auto write = [&](const std::string& ext, const std::string& contents) {
        const fs::path p = dir / (std::string(stem) + ext);
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << contents;
        if (!out) throw IOFailure("cannot write " + p.string());
    };
    write(".json", json.dump(2) + "\n");
    write(".csv", csv);
    if (gnuplot) write(".dat", *gnuplot);
}

}  // namespace prefchain
