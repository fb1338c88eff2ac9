#pragma once

#include <stdexcept>
#include <string>

namespace prefchain {

// Base for every error this library raises. `kind()` is the stable class name
// recorded in run manifests (failed_ids) and printed by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define PREFCHAIN_DEFINE_ERROR(Name, Base)                              \
    class Name : public Base {                                          \
    public:                                                             \
        explicit Name(const std::string& message)                       \
            : Base(#Name, message) {}                                   \
                                                                        \
    protected:                                                          \
        Name(std::string kind, const std::string& message)              \
            : Base(std::move(kind), message) {}                         \
    };

// Backend failures. BackendError is the family the loop engine turns into a
// backend_failure termination; refusals are surfaced separately.
class BackendError : public Error {
public:
    explicit BackendError(const std::string& message) : Error("BackendError", message) {}

protected:
    BackendError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

PREFCHAIN_DEFINE_ERROR(BackendExhausted, BackendError)
PREFCHAIN_DEFINE_ERROR(BackendRefusal, Error)
PREFCHAIN_DEFINE_ERROR(InvalidRequest, Error)

// Prompt rendering.
PREFCHAIN_DEFINE_ERROR(MissingPlaceholder, Error)
PREFCHAIN_DEFINE_ERROR(FeedbackEmpty, Error)
PREFCHAIN_DEFINE_ERROR(TemplateLoadError, Error)
PREFCHAIN_DEFINE_ERROR(InvalidCriteria, Error)

// Judging and refinement.
PREFCHAIN_DEFINE_ERROR(UnparseableVerdict, Error)
PREFCHAIN_DEFINE_ERROR(EmptyRefinement, Error)

// Dataset and store.
PREFCHAIN_DEFINE_ERROR(UnreadableFile, Error)
PREFCHAIN_DEFINE_ERROR(DuplicateId, Error)
PREFCHAIN_DEFINE_ERROR(DigestMismatch, Error)
PREFCHAIN_DEFINE_ERROR(IOFailure, Error)
PREFCHAIN_DEFINE_ERROR(SchemaError, Error)
PREFCHAIN_DEFINE_ERROR(InvalidChain, Error)

// Analytics.
PREFCHAIN_DEFINE_ERROR(InsufficientData, Error)
PREFCHAIN_DEFINE_ERROR(MissingGold, Error)

// Configuration.
PREFCHAIN_DEFINE_ERROR(ConfigError, Error)

#undef PREFCHAIN_DEFINE_ERROR

}  // namespace prefchain
