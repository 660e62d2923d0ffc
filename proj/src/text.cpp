#include "dmqr/text.hpp"

#include <algorithm>
#include <cctype>

namespace dmqr::text {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

bool is_token_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace

std::string trim(std::string_view s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && is_space(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && is_space(static_cast<unsigned char>(s[end - 1]))) --end;
    return std::string(s.substr(begin, end - begin));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char ch : s) {
        if (is_space(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(ch);
        }
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (is_token_char(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::unordered_set<std::string> token_set(std::string_view s) {
    auto tokens = tokenize(s);
    return std::unordered_set<std::string>(tokens.begin(), tokens.end());
}

double jaccard(const std::unordered_set<std::string>& a,
               const std::unordered_set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& tok : a) {
        if (b.count(tok)) ++inter;
    }
    std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string truncate_at_whitespace(std::string_view s, std::size_t limit) {
    if (s.size() <= limit) return std::string(s);
    std::string_view head = s.substr(0, limit);
    std::size_t cut = head.find_last_of(" \t\n\r");
    if (cut == std::string_view::npos || cut == 0) {
        return trim(head);
    }
    return trim(head.substr(0, cut));
}

}  // namespace dmqr::text
