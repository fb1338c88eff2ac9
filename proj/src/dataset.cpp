#include "prefchain/dataset.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace prefchain {

namespace fs = std::filesystem;

namespace {

template <typename T>
T require(const ordered_json& j, const char* key) {
    if (!j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(std::string("field '") + key + "' has the wrong type");
    }
}

template <typename Enum, typename Parser>
Enum require_enum(const ordered_json& j, const char* key, Parser parse) {
    const auto s = require<std::string>(j, key);
    const auto v = parse(s);
    if (!v) throw SchemaError(std::string("field '") + key + "' has unknown value '" + s + "'");
    return *v;
}

ordered_json answer_to_json(const Answer& a) {
    ordered_json j;
    j["index"] = a.index;
    j["origin"] = to_string(a.origin);
    j["text"] = a.text;
    j["token_count"] = a.token_count;
    if (a.feedback_used) j["feedback_used"] = *a.feedback_used;
    return j;
}

Answer answer_from_json(const ordered_json& j) {
    Answer a;
    a.index = require<std::size_t>(j, "index");
    a.origin = require_enum<AnswerOrigin>(j, "origin", parse_answer_origin);
    a.text = require<std::string>(j, "text");
    a.token_count = require<std::size_t>(j, "token_count");
    if (j.contains("feedback_used") && !j["feedback_used"].is_null()) {
        a.feedback_used = require<std::string>(j, "feedback_used");
    }
    return a;
}

ordered_json verdict_to_json(const Verdict& v) {
    ordered_json j;
    j["preferred"] = to_string(v.preferred);
    auto scores = ordered_json::array();
    for (const auto& s : v.criterion_scores) {
        scores.push_back(ordered_json{{"criterion", s.criterion}, {"a", s.score_a}, {"b", s.score_b}});
    }
    j["criterion_scores"] = std::move(scores);
    j["rationale"] = v.rationale;
    j["raw_completion"] = v.raw_completion;
    if (v.length_penalty_a != 0.0) j["length_penalty_a"] = v.length_penalty_a;
    if (v.length_penalty_b != 0.0) j["length_penalty_b"] = v.length_penalty_b;
    return j;
}

Verdict verdict_from_json(const ordered_json& j) {
    Verdict v;
    v.preferred = require_enum<Preference>(j, "preferred", parse_preference);
    if (j.contains("criterion_scores")) {
        for (const auto& s : j["criterion_scores"]) {
            v.criterion_scores.push_back(
                {require<std::string>(s, "criterion"), require<int>(s, "a"), require<int>(s, "b")});
        }
    }
    v.rationale = j.value("rationale", std::string());
    v.raw_completion = require<std::string>(j, "raw_completion");
    v.length_penalty_a = j.value("length_penalty_a", 0.0);
    v.length_penalty_b = j.value("length_penalty_b", 0.0);
    return v;
}

ordered_json voter_calls_to_json(const Verdict& first, const std::optional<Verdict>& second) {
    ordered_json j;
    j["first_call"] = verdict_to_json(first);
    if (second) j["second_call"] = verdict_to_json(*second);
    return j;
}

ordered_json debiased_to_json(const DebiasedVerdict& d) {
    ordered_json j;
    j["outcome"] = to_string(d.outcome);
    j["first_call"] = verdict_to_json(d.first_call);
    if (d.second_call) j["second_call"] = verdict_to_json(*d.second_call);
    if (!d.panel.empty()) {
        auto panel = ordered_json::array();
        for (const auto& p : d.panel) panel.push_back(voter_calls_to_json(p.first_call, p.second_call));
        j["panel"] = std::move(panel);
    }
    return j;
}

DebiasedVerdict debiased_from_json(const ordered_json& j) {
    DebiasedVerdict d;
    d.outcome = require_enum<PairOutcome>(j, "outcome", parse_pair_outcome);
    if (!j.contains("first_call")) throw SchemaError("missing field 'first_call'");
    d.first_call = verdict_from_json(j["first_call"]);
    if (j.contains("second_call")) d.second_call = verdict_from_json(j["second_call"]);
    if (j.contains("panel")) {
        for (const auto& p : j["panel"]) {
            VoterCalls calls;
            if (!p.contains("first_call")) throw SchemaError("panel entry lacks 'first_call'");
            calls.first_call = verdict_from_json(p["first_call"]);
            if (p.contains("second_call")) calls.second_call = verdict_from_json(p["second_call"]);
            d.panel.push_back(std::move(calls));
        }
    }
    return d;
}

std::map<std::string, std::string> string_map(const ordered_json& j, const char* key) {
    std::map<std::string, std::string> out;
    if (!j.contains(key)) return out;
    if (!j[key].is_object()) throw SchemaError(std::string("field '") + key + "' must be an object");
    for (const auto& [k, v] : j[key].items()) out[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return out;
}

void write_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const auto n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IOFailure(std::string("write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

void fsync_dir(const fs::path& dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
    const fs::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw IOFailure("cannot write " + tmp.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, contents);
    } catch (...) {
        ::close(fd);
        throw;
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) throw IOFailure("cannot flush " + tmp.string());
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IOFailure("cannot rename " + tmp.string() + ": " + ec.message());
    fsync_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

}  // namespace

// ---------------------------------------------------------------------------
// Input records

QueryRecord parse_record_line(std::string_view line, std::size_t line_no) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw SchemaError("line is not valid JSON");
    }
    if (!j.is_object()) throw SchemaError("line is not a JSON object");

    QueryRecord r;
    if (!j.contains("query") || !j["query"].is_string()) throw SchemaError("'query' must be a string");
    r.query = j["query"].get<std::string>();
    if (is_blank(r.query)) throw SchemaError("'query' is blank");

    if (j.contains("id") && !j["id"].is_null()) {
        if (!j["id"].is_string()) throw SchemaError("'id' must be a string");
        r.id = j["id"].get<std::string>();
        if (r.id.empty()) throw SchemaError("'id' is empty");
    } else {
        r.id = "line-" + std::to_string(line_no);
    }
    if (j.contains("answer") && !j["answer"].is_null()) {
        if (!j["answer"].is_string()) throw SchemaError("'answer' must be a string");
        r.initial_answer = j["answer"].get<std::string>();
    }
    if (j.contains("metadata") && !j["metadata"].is_null()) {
        if (!j["metadata"].is_object()) throw SchemaError("'metadata' must be an object");
        r.metadata = string_map(j, "metadata");
    }
    return r;
}

RecordReader::RecordReader(const fs::path& path) : in_(path, std::ios::binary) {
    if (!in_ || fs::is_directory(path)) throw UnreadableFile("cannot read input " + path.string());
}

std::optional<LoadEvent> RecordReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;
        try {
            auto record = parse_record_line(line, line_no_);
            if (!seen_ids_.insert(record.id).second) {
                throw DuplicateId("record id '" + record.id + "' repeats at line " + std::to_string(line_no_));
            }
            return LoadEvent{std::move(record)};
        } catch (const SchemaError& e) {
            return LoadEvent{ParseErrorEvent{line_no_, e.what()}};
        }
    }
    return std::nullopt;
}

std::vector<LoadEvent> load_records(const fs::path& path) {
    RecordReader reader(path);
    std::vector<LoadEvent> out;
    while (auto ev = reader.next()) out.push_back(std::move(*ev));
    return out;
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UnreadableFile("cannot read " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    os << "sha256:";
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

// ---------------------------------------------------------------------------
// Chain serialization

ordered_json chain_to_json(const PreferenceChain& chain) {
    ordered_json j;
    j["schema_version"] = kChainSchemaVersion;
    j["record_id"] = chain.record_id;
    j["mode"] = to_string(chain.mode);
    j["query"] = chain.query;
    j["metadata"] = chain.metadata;
    j["template_versions"] = chain.template_versions;
    auto answers = ordered_json::array();
    for (const auto& a : chain.answers) answers.push_back(answer_to_json(a));
    j["answers"] = std::move(answers);
    if (chain.rejected_candidate) j["rejected_candidate"] = answer_to_json(*chain.rejected_candidate);
    auto verdicts = ordered_json::array();
    for (const auto& v : chain.step_verdicts) verdicts.push_back(debiased_to_json(v));
    j["step_verdicts"] = std::move(verdicts);
    j["termination"] = to_string(chain.termination);
    return j;
}

PreferenceChain chain_from_json(const ordered_json& j) {
    if (!j.is_object()) throw SchemaError("chain line is not a JSON object");
    const int version = require<int>(j, "schema_version");
    if (version != kChainSchemaVersion) {
        throw SchemaError("unsupported chain schema_version " + std::to_string(version));
    }
    PreferenceChain c;
    c.record_id = require<std::string>(j, "record_id");
    c.mode = require_enum<ChainMode>(j, "mode", parse_chain_mode);
    c.query = require<std::string>(j, "query");
    c.metadata = string_map(j, "metadata");
    c.template_versions = string_map(j, "template_versions");
    if (!j.contains("answers") || !j["answers"].is_array()) throw SchemaError("missing field 'answers'");
    for (const auto& a : j["answers"]) c.answers.push_back(answer_from_json(a));
    if (j.contains("rejected_candidate") && !j["rejected_candidate"].is_null()) {
        c.rejected_candidate = answer_from_json(j["rejected_candidate"]);
    }
    if (j.contains("step_verdicts")) {
        for (const auto& v : j["step_verdicts"]) c.step_verdicts.push_back(debiased_from_json(v));
    }
    c.termination = require_enum<Termination>(j, "termination", parse_termination);
    return c;
}

std::string serialize_chain(const PreferenceChain& chain) { return chain_to_json(chain).dump(); }

PreferenceChain parse_chain_line(std::string_view line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw SchemaError("chain line is not valid JSON");
    }
    return chain_from_json(j);
}

ChainReader::ChainReader(const fs::path& path) : in_(path, std::ios::binary) {
    if (!in_ || fs::is_directory(path)) throw UnreadableFile("cannot read store " + path.string());
}

std::optional<PreferenceChain> ChainReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        // getline sets eof when the last line has no terminator: in flight.
        if (in_.eof()) return std::nullopt;
        if (line.empty()) continue;
        return parse_chain_line(line);
    }
    return std::nullopt;
}

std::vector<PreferenceChain> read_chains(const fs::path& path) {
    ChainReader reader(path);
    std::vector<PreferenceChain> out;
    while (auto c = reader.next()) out.push_back(std::move(*c));
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

ordered_json manifest_to_json(const RunManifest& m) {
    ordered_json j;
    j["run_id"] = m.run_id;
    j["input_digest"] = m.input_digest;
    j["completed_ids"] = m.completed_ids;
    j["failed_ids"] = m.failed_ids;
    j["config_snapshot"] = m.config_snapshot;
    return j;
}

RunManifest manifest_from_json(const ordered_json& j) {
    RunManifest m;
    m.run_id = require<std::string>(j, "run_id");
    m.input_digest = require<std::string>(j, "input_digest");
    m.completed_ids = require<std::set<std::string>>(j, "completed_ids");
    m.failed_ids = require<std::map<std::string, std::string>>(j, "failed_ids");
    m.config_snapshot = j.contains("config_snapshot") ? j["config_snapshot"] : ordered_json::object();
    return m;
}

RunManifest read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UnreadableFile("cannot read manifest " + path.string());
    try {
        return manifest_from_json(ordered_json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest is not valid JSON: ") + e.what());
    }
}

void write_manifest_atomic(const fs::path& path, const RunManifest& m) {
    write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Store

RunManifest recover_store(const fs::path& dir) {
    const fs::path store = dir / kStoreFile;
    const fs::path manifest_path = dir / kManifestFile;
    std::error_code ec;
    fs::remove(fs::path(manifest_path.string() + ".tmp"), ec);

    RunManifest manifest = read_manifest(manifest_path);

    if (!fs::exists(store)) {
        std::ofstream(store, std::ios::binary).flush();
    }

    // Drop an unterminated tail left by an interrupted append.
    std::uintmax_t committed = 0;
    {
        std::ifstream in(store, std::ios::binary);
        std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto last_nl = contents.rfind('\n');
        committed = last_nl == std::string::npos ? 0 : last_nl + 1;
        if (committed != contents.size()) fs::resize_file(store, committed);
    }

    std::set<std::string> in_store;
    ChainReader reader(store);
    while (auto c = reader.next()) in_store.insert(c->record_id);

    RunManifest reconciled = manifest;
    reconciled.completed_ids = in_store;
    for (const auto& id : in_store) reconciled.failed_ids.erase(id);
    if (!(reconciled == manifest)) write_manifest_atomic(manifest_path, reconciled);
    return reconciled;
}

ChainStore::ChainStore(fs::path dir, RunManifest manifest, StoreOptions options)
    : dir_(std::move(dir)), manifest_(std::move(manifest)), options_(options) {}

ChainStore::ChainStore(ChainStore&& other) noexcept
    : dir_(std::move(other.dir_)),
      manifest_(std::move(other.manifest_)),
      options_(other.options_),
      fd_(other.fd_),
      pending_(other.pending_) {
    other.fd_ = -1;
    other.pending_ = 0;
}

ChainStore::~ChainStore() {
    if (fd_ >= 0) {
        try {
            std::lock_guard lock(mutex_);
            if (pending_ > 0) checkpoint_locked();
        } catch (...) {
            // Recovery on the next open rolls the committed lines forward.
        }
        ::close(fd_);
    }
}

ChainStore ChainStore::create(const fs::path& dir, RunManifest manifest, StoreOptions options) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IOFailure("cannot create " + dir.string() + ": " + ec.message());
    if (fs::exists(dir / kManifestFile)) {
        throw IOFailure("run already exists in " + dir.string() + " (use resume)");
    }
    manifest.completed_ids.clear();
    {
        std::ofstream out(dir / kStoreFile, std::ios::binary | std::ios::trunc);
        if (!out) throw IOFailure("cannot create store in " + dir.string());
    }
    write_manifest_atomic(dir / kManifestFile, manifest);
    ChainStore store(dir, std::move(manifest), options);
    store.open_for_append();
    return store;
}

ChainStore ChainStore::open(const fs::path& dir, StoreOptions options) {
    if (!fs::exists(dir / kManifestFile)) throw UnreadableFile("no run manifest in " + dir.string());
    ChainStore store(dir, recover_store(dir), options);
    store.open_for_append();
    return store;
}

void ChainStore::open_for_append() {
    fd_ = ::open(store_path().c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd_ < 0) throw IOFailure("cannot open " + store_path().string() + ": " + std::strerror(errno));
}

void ChainStore::append_chain(const PreferenceChain& chain) {
    const auto violations = validate_chain(chain, options_.max_refinements);
    if (!violations.empty()) {
        throw InvalidChain("chain " + chain.record_id + " is invalid: " + violations.front());
    }
    const std::string line = serialize_chain(chain) + "\n";

    std::lock_guard lock(mutex_);
    if (manifest_.completed_ids.count(chain.record_id) != 0) {
        throw DuplicateId("chain for record '" + chain.record_id + "' already stored");
    }
    write_all(fd_, line);
    if (::fsync(fd_) != 0) throw IOFailure(std::string("fsync failed: ") + std::strerror(errno));
    manifest_.completed_ids.insert(chain.record_id);
    manifest_.failed_ids.erase(chain.record_id);
    if (++pending_ >= options_.checkpoint_every) checkpoint_locked();
}

void ChainStore::mark_failed(const std::string& record_id, const std::string& error_class) {
    std::lock_guard lock(mutex_);
    if (manifest_.completed_ids.count(record_id) != 0) {
        throw DuplicateId("record '" + record_id + "' is already completed");
    }
    manifest_.failed_ids[record_id] = error_class;
    checkpoint_locked();
}

void ChainStore::checkpoint() {
    std::lock_guard lock(mutex_);
    checkpoint_locked();
}

void ChainStore::checkpoint_locked() {
    write_manifest_atomic(manifest_path(), manifest_);
    pending_ = 0;
}

RunManifest ChainStore::manifest() const {
    std::lock_guard lock(mutex_);
    return manifest_;
}

// ---------------------------------------------------------------------------
// Resume and export

PendingRecords resume(const RunManifest& manifest, const fs::path& input, bool retry_failed) {
    const auto digest = file_digest(input);
    if (digest != manifest.input_digest) {
        throw DigestMismatch("input " + input.string() + " changed since the run started (" + digest +
                             " != " + manifest.input_digest + ")");
    }
    PendingRecords out;
    RecordReader reader(input);
    while (auto ev = reader.next()) {
        if (auto* err = std::get_if<ParseErrorEvent>(&*ev)) {
            out.errors.push_back(std::move(*err));
            continue;
        }
        auto& record = std::get<QueryRecord>(*ev);
        if (manifest.completed_ids.count(record.id) != 0) continue;
        if (!retry_failed && manifest.failed_ids.count(record.id) != 0) continue;
        out.records.push_back(std::move(record));
    }
    return out;
}

std::size_t export_sft(const fs::path& store, const fs::path& out_path) {
    ChainReader reader(store);
    std::string out;
    std::size_t count = 0;
    while (auto chain = reader.next()) {
        if (chain->answers.empty()) throw SchemaError("chain " + chain->record_id + " has no answers");
        ordered_json j;
        j["prompt"] = chain->query;
        j["completion"] = chain->final_answer().text;
        j["chain_length"] = chain->answers.size();
        j["termination"] = to_string(chain->termination);
        out += j.dump();
        out += '\n';
        ++count;
    }
    if (!out_path.parent_path().empty()) {
        std::error_code ec;
        fs::create_directories(out_path.parent_path(), ec);
    }
    write_file_atomic(out_path, out);
    return count;
}

}  // namespace prefchain
