#pragma once

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace dmqr::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Collapses every run of whitespace to a single space and trims the ends.
std::string collapse_whitespace(std::string_view s);

/// Minimal tokenizer shared by the index, the lexical reranker and the
/// diversity stats: lowercase, split on non-alphanumeric, drop empties.
/// Bytes >= 0x80 count as token characters so UTF-8 text survives intact.
std::vector<std::string> tokenize(std::string_view s);

std::unordered_set<std::string> token_set(std::string_view s);

/// Jaccard similarity of the two token sets; 1.0 when both are empty.
double jaccard(const std::unordered_set<std::string>& a,
               const std::unordered_set<std::string>& b);

/// Cuts `s` to at most `limit` characters, backing up to the last whitespace
/// inside the limit when one exists.
std::string truncate_at_whitespace(std::string_view s, std::size_t limit);

}  // namespace dmqr::text
