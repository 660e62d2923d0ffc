#include "dmqr/errors.hpp"

namespace dmqr {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyQuery: return "EmptyQuery";
        case ErrorCode::DuplicateStrategy: return "DuplicateStrategy";
        case ErrorCode::UnknownStrategy: return "UnknownStrategy";
        case ErrorCode::EmptyDocument: return "EmptyDocument";
        case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
        case ErrorCode::Transport: return "Transport";
        case ErrorCode::Auth: return "Auth";
        case ErrorCode::BadRequest: return "BadRequest";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::EmptyCompletion: return "EmptyCompletion";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::IndexMissing: return "IndexMissing";
        case ErrorCode::DuplicateDocId: return "DuplicateDocId";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::ProtocolError: return "ProtocolError";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace dmqr
