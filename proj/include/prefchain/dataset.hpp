#pragma once

// JSONL input records, the append-only chain store with its run manifest, and
// the SFT export.
//
// Store layout inside a run directory:
//   chains.jsonl   one serialized PreferenceChain per line, append-only
//   manifest.json  RunManifest, replaced atomically (write temp, rename)
//
// A chain line is committed once its terminating '\n' is on disk. The manifest
// may lag behind the store; opening a store reconciles the two by dropping any
// unterminated tail and rolling committed lines forward into the manifest.

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "prefchain/chain.hpp"
#include "prefchain/errors.hpp"

namespace prefchain {

using ordered_json = nlohmann::ordered_json;

constexpr int kChainSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Input records

struct ParseErrorEvent {
    std::size_t line = 0;  // 1-based
    std::string message;

    bool operator==(const ParseErrorEvent&) const = default;
};

using LoadEvent = std::variant<QueryRecord, ParseErrorEvent>;

// Streams records from a JSONL file in file order. Blank lines are skipped.
// Records without an "id" get "line-<n>".
class RecordReader {
public:
    explicit RecordReader(const std::filesystem::path& path);  // throws UnreadableFile

    // Next record or parse error; nullopt at end of file. Throws DuplicateId.
    std::optional<LoadEvent> next();

private:
    std::ifstream in_;
    std::size_t line_no_ = 0;
    std::set<std::string> seen_ids_;
};

std::vector<LoadEvent> load_records(const std::filesystem::path& path);

// Parses one input line. Throws SchemaError with a readable message.
QueryRecord parse_record_line(std::string_view line, std::size_t line_no);

// "sha256:<hex>" of the file contents.
std::string file_digest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Chain serialization

ordered_json chain_to_json(const PreferenceChain& chain);
PreferenceChain chain_from_json(const ordered_json& j);  // throws SchemaError

// Single line, no trailing newline.
std::string serialize_chain(const PreferenceChain& chain);
PreferenceChain parse_chain_line(std::string_view line);

// Streams committed chains from a store file. An unterminated final line is
// in-flight and is not reported.
class ChainReader {
public:
    explicit ChainReader(const std::filesystem::path& path);  // throws UnreadableFile
    std::optional<PreferenceChain> next();

private:
    std::ifstream in_;
};

std::vector<PreferenceChain> read_chains(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest and store

struct RunManifest {
    std::string run_id;
    std::string input_digest;
    std::set<std::string> completed_ids;
    std::map<std::string, std::string> failed_ids;  // id -> error class
    ordered_json config_snapshot = ordered_json::object();

    bool operator==(const RunManifest&) const = default;
};

ordered_json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const ordered_json& j);
RunManifest read_manifest(const std::filesystem::path& path);
void write_manifest_atomic(const std::filesystem::path& path, const RunManifest& m);

inline constexpr std::string_view kStoreFile = "chains.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";

struct StoreOptions {
    std::size_t max_refinements = kDefaultMaxRefinements;
    // Manifest rewrite cadence, in appends. The store stays the source of
    // truth for completed ids in between.
    std::size_t checkpoint_every = 64;
};

class ChainStore {
public:
    // Starts a new run in `dir`; throws IOFailure if a manifest already exists.
    static ChainStore create(const std::filesystem::path& dir, RunManifest manifest, StoreOptions options = {});
    // Opens an existing run and reconciles store and manifest.
    static ChainStore open(const std::filesystem::path& dir, StoreOptions options = {});

    ChainStore(ChainStore&& other) noexcept;
    ChainStore& operator=(ChainStore&&) = delete;
    ~ChainStore();

    // Validates, appends durably and records the id as completed. Safe to call
    // from many threads. Throws InvalidChain, DuplicateId or IOFailure.
    void append_chain(const PreferenceChain& chain);

    void mark_failed(const std::string& record_id, const std::string& error_class);

    // Writes the manifest now.
    void checkpoint();

    RunManifest manifest() const;
    std::filesystem::path store_path() const { return dir_ / kStoreFile; }
    std::filesystem::path manifest_path() const { return dir_ / kManifestFile; }

private:
    ChainStore(std::filesystem::path dir, RunManifest manifest, StoreOptions options);
    void open_for_append();
    void checkpoint_locked();

    std::filesystem::path dir_;
    RunManifest manifest_;
    StoreOptions options_;
    int fd_ = -1;
    std::size_t pending_ = 0;
    mutable std::mutex mutex_;
};

// Reconciles store and manifest in `dir` after an interruption: truncates an
// unterminated tail, removes stale temp files, and rolls committed ids into
// the manifest. Returns the reconciled manifest.
RunManifest recover_store(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Resume and export

struct PendingRecords {
    std::vector<QueryRecord> records;
    std::vector<ParseErrorEvent> errors;
};

// Records of `input` not yet completed (nor failed, unless retry_failed).
// Throws DigestMismatch when the input changed since the run started.
PendingRecords resume(const RunManifest& manifest, const std::filesystem::path& input, bool retry_failed = false);

// One {prompt, completion, chain_length, termination} line per chain; the
// completion is the final accepted answer. Returns the number of lines.
std::size_t export_sft(const std::filesystem::path& store, const std::filesystem::path& out_path);

}  // namespace prefchain
