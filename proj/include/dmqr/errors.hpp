#pragma once

#include <stdexcept>
#include <string>

namespace dmqr {

enum class ErrorCode {
    EmptyQuery,
    DuplicateStrategy,
    UnknownStrategy,
    EmptyDocument,
    MissingPlaceholder,
    Transport,
    Auth,
    BadRequest,
    RateLimited,
    EmptyCompletion,
    ParseFailure,
    IndexMissing,
    DuplicateDocId,
    EmptyCorpus,
    ProtocolError,
    InvalidConfig,
    IoError,
};

const char* to_string(ErrorCode code);

/// Engine-wide exception type. Every failure surfaced across a module
/// boundary carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

    /// Seconds the provider asked us to wait; 0 when absent. RateLimited only.
    int retry_after_s() const { return retry_after_s_; }
    void set_retry_after_s(int s) { retry_after_s_ = s; }

private:
    ErrorCode code_;
    int retry_after_s_ = 0;
};

}  // namespace dmqr
