#pragma once

#include <string>
#include <string_view>

namespace dmqr::hash {

/// Hex-encoded SHA-256 digest (64 lowercase hex chars).
std::string sha256_hex(std::string_view data);

bool looks_like_sha256_hex(std::string_view s);

}  // namespace dmqr::hash
