#include "prefchain/cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "prefchain/analytics.hpp"
#include "prefchain/errors.hpp"
#include "prefchain/loop.hpp"
#include "prefchain/workers.hpp"

namespace prefchain {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

ChainMode chain_mode_of(LoopMode m) {
    switch (m) {
        case LoopMode::refine_n_judge: return ChainMode::refine_n_judge;
        case LoopMode::refiner_only: return ChainMode::refiner_only;
        case LoopMode::best_of_n: return ChainMode::best_of_n;
    }
    return ChainMode::refine_n_judge;
}

bool needs_judge(ChainMode mode) { return mode == ChainMode::refine_n_judge || mode == ChainMode::best_of_n; }

StoreOptions store_options(const RunConfig& cfg, ChainMode mode) {
    StoreOptions o;
    o.max_refinements = cfg.loop.max_refinements;
    if (mode == ChainMode::refiner_only) o.max_refinements = std::max(o.max_refinements, cfg.loop.refiner_steps);
    o.checkpoint_every = cfg.checkpoint_every;
    return o;
}

ordered_json run_snapshot(const RunConfig& cfg, ChainMode mode, const TemplateSet& templates) {
    ordered_json j = to_json(cfg);
    j["mode"] = to_string(mode);
    auto versions = ordered_json::object();
    for (const auto& [kind, version] : templates.versions()) versions[kind] = version;
    j["template_versions"] = std::move(versions);
    return j;
}

PreferenceChain single_answer_chain(const QueryRecord& record, Answer answer, ChainMode mode,
                                    const RunConfig& cfg, const TemplateSet& templates) {
    PreferenceChain chain;
    chain.record_id = record.id;
    chain.query = record.query;
    chain.metadata = record.metadata;
    chain.mode = mode;
    answer.index = 0;
    answer.origin = AnswerOrigin::zero_shot;
    chain.answers.push_back(std::move(answer));
    chain.termination = Termination::max_iterations;
    if (mode == ChainMode::best_of_n) {
        if (cfg.loop.best_of_n_selector == BestOfNSelector::pairwise) {
            chain.template_versions["judge"] = templates.judge.version;
        } else {
            chain.template_versions["select"] = templates.select.version;
        }
    }
    return chain;
}

PreferenceChain produce(const RefineLoop& loop, const QueryRecord& record, ChainMode mode, const RunConfig& cfg,
                        const TemplateSet& templates) {
    switch (mode) {
        case ChainMode::refine_n_judge: return loop.run_chain(record);
        case ChainMode::refiner_only: return loop.run_refiner_only(record, cfg.loop.refiner_steps);
        case ChainMode::best_of_n:
            return single_answer_chain(record, loop.run_best_of_n(record), mode, cfg, templates);
        case ChainMode::zero_shot:
            return single_answer_chain(record, loop.run_zero_shot(record), mode, cfg, templates);
    }
    throw ConfigError("unknown mode");
}

struct Outcome {
    bool done = false;
    std::optional<PreferenceChain> chain;
    std::string error_kind;
    std::string error_message;
    UsageReport usage;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

void print_usage_line(std::ostream& out, const std::string& label, const TagUsage& u) {
    out << "  " << std::left << std::setw(10) << label << std::right << ' ' << u.calls << " calls, "
        << u.prompt_tokens << " prompt tokens, " << u.completion_tokens << " completion tokens\n";
}

std::string fraction_cell(const std::optional<double>& v) {
    if (!v) return "     -";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%6.3f", *v);
    return buf;
}

std::string opt_fixed(const std::optional<double>& v, int digits = 4) {
    if (!v) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << *v;
    return os.str();
}

// Analytics with a scripted judge run single-threaded: a shared scripted
// backend consumes its random stream in call order.
std::size_t analysis_parallelism(const RunConfig& cfg) {
    for (const auto& name : cfg.loop.judge.voters) {
        auto it = cfg.backends.find(name);
        if (it != cfg.backends.end() && it->second.kind == BackendSpec::Kind::scripted) return 1;
    }
    return cfg.parallelism;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline

RunSummary run_pipeline(const RunConfig& cfg, ChainMode mode, const PipelineOptions& options, std::ostream& out) {
    if (cfg.input.empty()) throw ConfigError("no input file given (--input)");
    if (cfg.out.empty()) throw ConfigError("no output directory given (--out)");

    BackendFactory factory(cfg);
    const bool with_judge = needs_judge(mode);
    // Surfaces missing backends and template problems before any work starts.
    factory.loop("", with_judge);
    const TemplateSet templates = templates_of(cfg);
    const ordered_json snapshot = run_snapshot(cfg, mode, templates);
    const StoreOptions sopts = store_options(cfg, mode);

    RunSummary summary;
    PendingRecords pending;
    std::optional<ChainStore> store;
    std::set<std::string> known_failed;

    if (fs::exists(cfg.out / kManifestFile)) {
        if (!options.resume) {
            throw ConfigError("a run already exists in " + cfg.out.string() + "; pass --resume to continue it");
        }
        store.emplace(ChainStore::open(cfg.out, sopts));
        const RunManifest m = store->manifest();
        if (comparable_snapshot(m.config_snapshot) != comparable_snapshot(snapshot)) {
            throw ConfigError("configuration differs from the run being resumed in " + cfg.out.string());
        }
        pending = resume(m, cfg.input, options.retry_failed);
        summary.already_done = m.completed_ids.size();
        if (!options.retry_failed) {
            for (const auto& [id, kind] : m.failed_ids) known_failed.insert(id);
        }
    } else {
        RecordReader reader(cfg.input);
        while (auto ev = reader.next()) {
            if (auto* err = std::get_if<ParseErrorEvent>(&*ev)) {
                pending.errors.push_back(std::move(*err));
            } else {
                pending.records.push_back(std::get<QueryRecord>(std::move(*ev)));
            }
        }
        RunManifest m;
        m.input_digest = file_digest(cfg.input);
        m.run_id = "run-" + hex64(stable_hash(snapshot.dump() + m.input_digest));
        m.config_snapshot = snapshot;
        store.emplace(ChainStore::create(cfg.out, std::move(m), sopts));
    }

    for (const auto& e : pending.errors) {
        const std::string id = "line-" + std::to_string(e.line);
        if (known_failed.count(id) != 0) continue;
        out << "line " << e.line << ": " << e.message << '\n';
        store->mark_failed(id, "SchemaError");
        ++summary.failed;
    }
    summary.parse_errors = pending.errors;

    const auto& records = pending.records;
    const std::size_t n = records.size();
    std::vector<Outcome> results(n);
    std::mutex commit_mutex;
    std::size_t next_commit = 0;

    auto commit = [&](const QueryRecord& record, Outcome& o) {
        summary.usage += o.usage;
        ++summary.attempted;
        if (o.chain) {
            try {
                store->append_chain(*o.chain);
                ++summary.completed;
                ++summary.terminations[o.chain->termination];
                o.chain.reset();
                return;
            } catch (const InvalidChain& e) {
                o.error_kind = e.kind();
                o.error_message = e.what();
            } catch (const DuplicateId& e) {
                o.error_kind = e.kind();
                o.error_message = e.what();
            }
        }
        store->mark_failed(record.id, o.error_kind);
        ++summary.failed;
        out << "record " << record.id << " failed: " << o.error_kind << ": " << o.error_message << '\n';
    };

    auto work = [&](std::size_t i) {
        const auto& record = records[i];
        Outcome o;
        std::vector<std::shared_ptr<Gateway>> owned;
        try {
            const RefineLoop loop = factory.loop(record.id, with_judge, &owned);
            o.chain = produce(loop, record, mode, cfg, templates);
        } catch (const Error& e) {
            o.error_kind = e.kind();
            o.error_message = e.what();
        }
        for (const auto& gw : owned) o.usage += gw->usage_report();
        o.done = true;

        std::lock_guard lock(commit_mutex);
        results[i] = std::move(o);
        while (next_commit < n && results[next_commit].done) {
            commit(records[next_commit], results[next_commit]);
            ++next_commit;
        }
    };

    run_bounded(n, cfg.parallelism, work, options.stop);
    store->checkpoint();
    summary.usage += factory.shared_usage();
    summary.interrupted = next_commit < n;
    return summary;
}

void render_dry_run(const RunConfig& cfg, ChainMode mode, std::ostream& out) {
    if (cfg.input.empty()) throw ConfigError("no input file given (--input)");
    const TemplateSet templates = templates_of(cfg);
    const CriteriaSet criteria = criteria_of(cfg);

    RecordReader reader(cfg.input);
    std::optional<QueryRecord> first;
    while (auto ev = reader.next()) {
        if (auto* r = std::get_if<QueryRecord>(&*ev)) {
            first = std::move(*r);
            break;
        }
    }
    if (!first) {
        out << "input has no valid record; nothing to render\n";
        return;
    }
    const auto& rec = *first;
    const bool seeded = rec.initial_answer && !is_blank(*rec.initial_answer);
    const std::string ans0 = seeded ? *rec.initial_answer : "<Ans_0: zero-shot answer>";

    auto section = [&](const std::string& title, const std::string& body) {
        out << "=== " << title << " ===\n" << body << "\n\n";
    };
    out << "record " << rec.id << " (mode " << to_string(mode) << ")\n\n";
    if (!seeded || mode == ChainMode::best_of_n || mode == ChainMode::zero_shot) section("zero_shot", rec.query);
    if (mode == ChainMode::refine_n_judge || mode == ChainMode::refiner_only) {
        section("feedback " + templates.feedback.version, render_feedback(templates.feedback, rec.query, ans0, criteria));
        section("refine " + templates.refine.version,
                render_refine(templates.refine, rec.query, ans0, "<feedback>", criteria));
    }
    if (mode == ChainMode::refine_n_judge) {
        section("judge " + templates.judge.version,
                render_judge(templates.judge, rec.query, ans0, "<Ans_1: refined answer>", criteria));
    }
    if (mode == ChainMode::best_of_n) {
        if (cfg.loop.best_of_n_selector == BestOfNSelector::pairwise) {
            section("judge " + templates.judge.version,
                    render_judge(templates.judge, rec.query, "<candidate 1>", "<candidate 2>", criteria));
        } else {
            section("select " + templates.select.version,
                    render_select(templates.select, rec.query, {"<candidate 1>", "<candidate 2>"}, criteria));
        }
    }
}

void print_summary(const RunSummary& s, std::ostream& out) {
    out << "records: " << s.attempted << " processed, " << s.completed << " chains completed, " << s.failed
        << " failed";
    if (s.already_done > 0) out << ", " << s.already_done << " already done";
    out << '\n';
    out << "termination:";
    for (auto t : {Termination::judge_stop, Termination::max_iterations, Termination::backend_failure}) {
        auto it = s.terminations.find(t);
        out << ' ' << to_string(t) << '=' << (it == s.terminations.end() ? 0 : it->second);
    }
    out << '\n';
    out << "usage:\n";
    for (auto tag : kAllRequestTags) print_usage_line(out, std::string(to_string(tag)), s.usage.of(tag));
    print_usage_line(out, "total", s.usage.total());
    if (s.interrupted) out << "interrupted: remaining records are pending; rerun with --resume\n";
}

namespace {

int run_mode(const RunConfig& cfg, ChainMode mode, const PipelineOptions& options, std::ostream& out,
             std::ostream& err) {
    try {
        if (options.dry_run) {
            render_dry_run(cfg, mode, out);
            return kExitOk;
        }
        const auto summary = run_pipeline(cfg, mode, options, out);
        print_summary(summary, out);
        if (summary.interrupted) return kExitInterrupted;
        return summary.failed > 0 ? kExitFailed : kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
    } catch (const TemplateLoadError& e) {
        err << "template error: " << e.what() << '\n';
    } catch (const UnreadableFile& e) {
        err << "error: " << e.what() << '\n';
    } catch (const DigestMismatch& e) {
        err << "error: " << e.what() << '\n';
    } catch (const DuplicateId& e) {
        err << "input error: " << e.what() << '\n';
    } catch (const MissingPlaceholder& e) {
        err << "template error: " << e.what() << '\n';
    }
    return kExitConfig;
}

}  // namespace

int cmd_curate(const RunConfig& cfg, const PipelineOptions& options, std::ostream& out, std::ostream& err) {
    return run_mode(cfg, chain_mode_of(cfg.loop.mode), options, out, err);
}

int cmd_baseline(const RunConfig& cfg, ChainMode mode, const PipelineOptions& options, std::ostream& out,
                 std::ostream& err) {
    if (mode == ChainMode::refine_n_judge) {
        err << "config error: baseline mode must be refiner_only, best_of_n or zero_shot\n";
        return kExitConfig;
    }
    return run_mode(cfg, mode, options, out, err);
}

// ---------------------------------------------------------------------------
// Analyze and export

std::optional<fs::path> resolve_store(const fs::path& p) {
    if (p.empty()) return std::nullopt;
    if (fs::is_directory(p)) {
        const auto f = p / kStoreFile;
        if (fs::is_regular_file(f)) return f;
        return std::nullopt;
    }
    if (fs::is_regular_file(p)) return p;
    return std::nullopt;
}

int cmd_analyze(const RunConfig& cfg, const AnalyzeOptions& opt, std::ostream& out, std::ostream& err) {
    const auto store = resolve_store(opt.store);
    if (!store) {
        err << "error: no chain store at '" << opt.store.string() << "'\n";
        return kExitConfig;
    }
    std::optional<fs::path> against;
    if (opt.against) {
        against = resolve_store(*opt.against);
        if (!against) {
            err << "error: no chain store at '" << opt.against->string() << "'\n";
            return kExitConfig;
        }
    }
    const std::optional<fs::path> out_dir = opt.out && !opt.out->empty() ? opt.out : std::nullopt;

    try {
        std::optional<BackendFactory> factory;
        auto judge = [&]() {
            if (!factory) factory.emplace(cfg);
            return factory->judge("analyze:" + opt.report);
        };
        const std::size_t workers = analysis_parallelism(cfg);

        if (opt.report == "histogram") {
            const auto h = chain_length_histogram(*store);
            std::size_t total = 0;
            out << "answers chains\n";
            for (const auto& [len, count] : h) {
                out << std::setw(7) << len << ' ' << count << '\n';
                total += count;
            }
            out << "total " << total << '\n';
            if (out_dir) write_report_files(*out_dir, "histogram", to_json(h), to_csv(h), to_gnuplot(h));
            return kExitOk;
        }

        if (opt.report == "win_matrix") {
            const auto chains = read_chains(*store);
            WinMatrixOptions wo;
            wo.depth = opt.depth;
            wo.trials_per_cell = opt.trials;
            wo.seed = cfg.seed;
            wo.parallelism = workers;
            const auto m = build_win_matrix(chains, *judge(), wo);
            out << "win fraction of Ans_j (column) over Ans_i (row)\n      ";
            for (std::size_t j = 0; j < m.depth; ++j) out << "  Ans_" << j;
            out << '\n';
            for (std::size_t i = 0; i < m.depth; ++i) {
                out << "Ans_" << i << ' ';
                for (std::size_t j = 0; j < m.depth; ++j) out << ' ' << fraction_cell(m.at(i, j));
                out << '\n';
            }
            if (out_dir) write_report_files(*out_dir, "win_matrix", to_json(m), to_csv(m), to_gnuplot(m));
            return kExitOk;
        }

        if (opt.report == "consistency") {
            const auto chains = read_chains(*store);
            ConsistencyOptions co;
            co.repeats = opt.repeats;
            co.seed = cfg.seed;
            co.parallelism = workers;
            const auto r = consistency_experiment(chains, *judge(), co);
            for (const auto& [t, s] : r.per_depth) {
                out << "depth " << t << " (Ans_" << t << " vs Ans_" << t + 1 << "): agreement "
                    << opt_fixed(s.agreement()) << ", excluding ties " << opt_fixed(s.agreement_excluding_ties())
                    << ", " << s.judgments << " judgments\n";
            }
            out << "terminal (Ans_n vs rejected): agreement " << opt_fixed(r.terminal.agreement())
                << ", excluding ties " << opt_fixed(r.terminal.agreement_excluding_ties()) << ", "
                << r.terminal.judgments << " judgments\n";
            if (out_dir) write_report_files(*out_dir, "consistency", to_json(r), to_csv(r), to_gnuplot(r));
            return kExitOk;
        }

        if (opt.report == "robustness") {
            const auto metric = parse_robustness_metric(opt.metric);
            if (!metric) throw ConfigError("unknown metric '" + opt.metric + "'");
            GoldMatch match = GoldMatch::exact;
            if (opt.gold_match == "contains") match = GoldMatch::contains;
            else if (opt.gold_match != "exact") throw ConfigError("gold match must be exact or contains");

            const auto chains = read_chains(*store);
            std::vector<AnswerSample> before;
            std::vector<AnswerSample> after;
            if (against) {
                before = final_answers(chains);
                after = final_answers(read_chains(*against));
            } else {
                before = initial_answers(chains);
                after = final_answers(chains);
            }
            std::shared_ptr<const PairwiseJudge> j;
            if (*metric == RobustnessMetric::mean_judge_score) j = judge();
            const auto r = robustness_delta(before, after, *metric, j.get(), match);
            const bool points = *metric == RobustnessMetric::binary_accuracy;
            out << to_string(r.metric) << ": before " << opt_fixed(r.before) << ", after " << opt_fixed(r.after)
                << ", delta " << opt_fixed(r.delta, 2) << (points ? " points" : "%") << " over " << r.matched
                << " records\n";
            if (out_dir) {
                write_report_files(*out_dir, "robustness_" + std::string(to_string(r.metric)), to_json(r), to_csv(r));
            }
            return kExitOk;
        }

        if (opt.report == "head_to_head") {
            if (!against) throw ConfigError("head_to_head needs a second store (--against)");
            const auto a = read_chains(*store);
            const auto b = read_chains(*against);
            const auto r = head_to_head(a, b, *judge(), cfg.seed, workers);
            out << std::fixed << std::setprecision(1) << "A wins " << r.a_win_percent() << "% | tie "
                << r.tie_percent() << "% | B wins " << r.b_win_percent() << "% over " << r.pairs << " pairs\n"
                << std::defaultfloat;
            if (out_dir) write_report_files(*out_dir, "head_to_head", to_json(r), to_csv(r));
            return kExitOk;
        }

        throw ConfigError("unknown report '" + opt.report +
                          "' (histogram, win_matrix, consistency, robustness, head_to_head)");
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TemplateLoadError& e) {
        err << "template error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << '\n';
        return kExitFailed;
    }
}

int cmd_export(const fs::path& store_arg, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    const auto store = resolve_store(store_arg);
    if (!store) {
        err << "error: no chain store at '" << store_arg.string() << "'\n";
        return kExitConfig;
    }
    if (out_dir.empty()) {
        err << "config error: no output directory given (--out)\n";
        return kExitConfig;
    }
    try {
        const auto path = out_dir / "sft.jsonl";
        const auto count = export_sft(*store, path);
        out << count << " pairs exported to " << path.string() << '\n';
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << '\n';
        return kExitFailed;
    }
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Curates preference chains by iterative refinement and pairwise judging", "prefchain"};
    app.require_subcommand(1);

    struct Flags {
        std::string config;
        std::string input;
        std::string out;
        std::string templates;
        std::optional<std::size_t> parallelism;
        std::optional<std::uint64_t> seed;
        bool resume = false;
        bool retry_failed = false;
        bool dry_run = false;
        std::string mode;
        AnalyzeOptions analyze;
        std::string against;
    } f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "Run configuration (JSON)");
        sub->add_option("--input", f.input, "Input JSONL, or the chain store for analyze/export");
        sub->add_option("--out", f.out, "Output directory");
        sub->add_option("--parallelism", f.parallelism, "Concurrent records")->check(CLI::PositiveNumber);
        sub->add_option("--seed", f.seed, "Run seed");
        sub->add_option("--templates", f.templates, "Template directory");
    };
    auto run_flags = [&](CLI::App* sub) {
        sub->add_flag("--resume", f.resume, "Continue the run found in --out");
        sub->add_flag("--retry-failed", f.retry_failed, "With --resume, retry records that failed");
        sub->add_flag("--dry-run", f.dry_run, "Render the prompts of the first record and exit");
    };

    auto* curate = app.add_subcommand("curate", "Build preference chains for every input record");
    common(curate);
    run_flags(curate);

    auto* baseline = app.add_subcommand("baseline", "Run a comparison pipeline");
    common(baseline);
    run_flags(baseline);
    baseline->add_option("--mode", f.mode, "refiner_only, best_of_n or zero_shot")
        ->required()
        ->check(CLI::IsMember({"refiner_only", "best_of_n", "zero_shot"}));

    auto* analyze = app.add_subcommand("analyze", "Measure a chain store");
    common(analyze);
    analyze->add_option("--report", f.analyze.report, "histogram, win_matrix, consistency, robustness, head_to_head")
        ->required()
        ->check(CLI::IsMember({"histogram", "win_matrix", "consistency", "robustness", "head_to_head"}));
    analyze->add_option("--depth", f.analyze.depth, "Win matrix depth (Ans_0..Ans_{depth-1})")
        ->check(CLI::Range(2, 1000));
    analyze->add_option("--repeats", f.analyze.repeats, "Consistency repeats per pair")->check(CLI::PositiveNumber);
    analyze->add_option("--trials", f.analyze.trials, "Win matrix trials per cell")->check(CLI::PositiveNumber);
    analyze->add_option("--against", f.against, "Second store (head_to_head B side, robustness after side)");
    analyze->add_option("--metric", f.analyze.metric, "binary_accuracy, mean_token_length or mean_judge_score");
    analyze->add_option("--gold-match", f.analyze.gold_match, "exact or contains");

    auto* exp = app.add_subcommand("export", "Write prompt/completion pairs for fine-tuning");
    common(exp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    RunConfig cfg;
    try {
        if (!f.config.empty()) cfg = load_run_config(f.config);
        if (!f.input.empty()) cfg.input = f.input;
        if (!f.out.empty()) cfg.out = f.out;
        if (!f.templates.empty()) cfg.templates = fs::path(f.templates);
        if (f.parallelism) cfg.parallelism = *f.parallelism;
        if (f.seed) cfg.seed = *f.seed;
        apply_env_overrides(cfg);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    if (*exp) return cmd_export(cfg.input, cfg.out, out, err);

    if (*analyze) {
        f.analyze.store = cfg.input;
        if (!f.against.empty()) f.analyze.against = fs::path(f.against);
        if (!cfg.out.empty()) f.analyze.out = cfg.out;
        return cmd_analyze(cfg, f.analyze, out, err);
    }

    g_interrupted.store(false);
    auto previous = std::signal(SIGINT, on_sigint);
    PipelineOptions po;
    po.resume = f.resume;
    po.retry_failed = f.retry_failed;
    po.dry_run = f.dry_run;
    po.stop = [] { return g_interrupted.load(); };

    int code = kExitOk;
    if (*curate) {
        code = cmd_curate(cfg, po, out, err);
    } else {
        code = cmd_baseline(cfg, *parse_chain_mode(f.mode), po, out, err);
    }
    std::signal(SIGINT, previous);
    return code;
}

}  // namespace prefchain
