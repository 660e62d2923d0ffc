#include "dmqr/rewrite.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

namespace dmqr::rewrite {
namespace {

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> lines;
    std::string current;
    std::istringstream in(s);
    while (std::getline(in, current)) {
        lines.push_back(current);
    }
    return lines;
}

bool strip_label(std::string& line, const std::string& label) {
    if (line.size() < label.size()) {
        return false;
    }
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(line[i])) != label[i]) {
            return false;
        }
    }
    line.erase(0, label.size());
    line = text::trim(line);
    return true;
}

void strip_known_labels(std::string& line) {
    static const std::vector<std::string> kLabels = {
        "rewritten query:", "refined query:", "core content:", "rewrite:", "query:",
    };
    for (const auto& label : kLabels) {
        if (strip_label(line, label)) {
            return;
        }
    }
}

void strip_wrapping_quotes(std::string& s) {
    if (s.size() >= 2) {
        const char first = s.front();
        const char last = s.back();
        if ((first == '"' && last == '"') || (first == '\'' && last == '\'')) {
            s = text::trim(s.substr(1, s.size() - 2));
        }
    }
}

// Leading "1.", "2)", "3:" or a "-"/"*" bullet; returns true and erases the
// marker when one is present.
bool strip_list_marker(std::string& line) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
        ++i;
    }
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
        line.erase(0, i + 1);
        line = text::trim(line);
        return true;
    }
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
        line.erase(0, 1);
        line = text::trim(line);
        return true;
    }
    return false;
}

std::string parse_by_kind(ParserKind kind, const std::string& completion) {
    switch (kind) {
        case ParserKind::SingleLine:
            return parse_single_line(completion);
        case ParserKind::KeywordList:
            return parse_keyword_list(completion);
        case ParserKind::Passthrough:
            return parse_passthrough(completion);
        case ParserKind::NumberedList:
            throw Error(ErrorCode::InvalidConfig,
                        "list parser is only valid for fusion variants");
    }
    throw Error(ErrorCode::InvalidConfig, "unhandled parser kind");
}

std::string run_strategy(const StrategyDescriptor& descriptor, const Query& query,
                         llm::Completer& completer) {
    validate_query(query);
    llm::ChatRequest request;
    request.user = llm::render(descriptor.prompt, {{"query", query.text}});
    const llm::ChatResponse response = completer.complete(request);
    const std::string parsed = parse_by_kind(descriptor.parser, response.text);
    if (parsed.empty()) {
        throw Error(ErrorCode::ParseFailure,
                    "completion for " + descriptor.id.name() +
                        " yielded no usable rewrite");
    }
    return parsed;
}

}  // namespace

std::string parse_single_line(const std::string& completion) {
    for (auto& line : split_lines(completion)) {
        std::string candidate = text::trim(line);
        if (candidate.empty()) {
            continue;
        }
        strip_known_labels(candidate);
        strip_wrapping_quotes(candidate);
        return candidate;
    }
    return "";
}

std::string parse_keyword_list(const std::string& completion) {
    std::string body = text::trim(completion);
    strip_label(body, "keywords:");
    std::replace(body.begin(), body.end(), '\n', ',');

    const bool has_comma = body.find(',') != std::string::npos;
    std::vector<std::string> parts;
    if (has_comma) {
        std::string part;
        std::istringstream in(body);
        while (std::getline(in, part, ',')) {
            parts.push_back(part);
        }
    } else {
        std::string part;
        std::istringstream in(body);
        while (in >> part) {
            parts.push_back(part);
        }
    }

    std::string joined;
    for (auto& part : parts) {
        std::string cleaned = text::trim(part);
        strip_list_marker(cleaned);
        if (cleaned.empty()) {
            continue;
        }
        if (!joined.empty()) {
            joined += ' ';
        }
        joined += cleaned;
    }
    return joined;
}

std::string parse_passthrough(const std::string& completion) {
    return text::trim(completion);
}

std::vector<std::string> parse_numbered_list(const std::string& completion) {
    std::vector<std::string> items;
    for (auto& line : split_lines(completion)) {
        std::string candidate = text::trim(line);
        if (candidate.empty()) {
            continue;
        }
        if (!strip_list_marker(candidate)) {
            continue;
        }
        if (!candidate.empty()) {
            items.push_back(candidate);
        }
    }
    return items;
}

void StrategyPool::add(StrategyDescriptor descriptor) {
    if (has(descriptor.id)) {
        throw Error(ErrorCode::DuplicateStrategy,
                    "strategy already registered: " + descriptor.id.name());
    }
    if (text::trim(descriptor.description).empty()) {
        throw Error(ErrorCode::InvalidConfig,
                    "strategy " + descriptor.id.name() + " has an empty description");
    }
    ordered_.push_back(std::move(descriptor));
}

bool StrategyPool::has(const StrategyId& id) const {
    return std::any_of(ordered_.begin(), ordered_.end(),
                       [&](const StrategyDescriptor& d) { return d.id == id; });
}

const StrategyDescriptor& StrategyPool::get(const StrategyId& id) const {
    for (const auto& descriptor : ordered_) {
        if (descriptor.id == id) {
            return descriptor;
        }
    }
    throw Error(ErrorCode::UnknownStrategy, "strategy not registered: " + id.name());
}

std::size_t StrategyPool::order_index(const StrategyId& id) const {
    for (std::size_t i = 0; i < ordered_.size(); ++i) {
        if (ordered_[i].id == id) {
            return i;
        }
    }
    throw Error(ErrorCode::UnknownStrategy, "strategy not registered: " + id.name());
}

std::vector<StrategyId> StrategyPool::ids() const {
    std::vector<StrategyId> out;
    out.reserve(ordered_.size());
    for (const auto& descriptor : ordered_) {
        out.push_back(descriptor.id);
    }
    return out;
}

StrategyPool StrategyPool::dmqr_default(const llm::TemplateRegistry& templates) {
    StrategyPool pool;
    pool.add(builtin_descriptor(StrategyId::gqr(), templates));
    pool.add(builtin_descriptor(StrategyId::kwr(), templates));
    pool.add(builtin_descriptor(StrategyId::par(), templates));
    pool.add(builtin_descriptor(StrategyId::cce(), templates));
    return pool;
}

StrategyDescriptor builtin_descriptor(const StrategyId& id,
                                      const llm::TemplateRegistry& templates) {
    StrategyDescriptor d;
    d.id = id;
    if (id == StrategyId::gqr()) {
        d.description =
            "General rewriting: restate the query clearly, keeping every relevant "
            "detail and removing noise. Suits most queries, especially wordy, vague "
            "or poorly phrased ones.";
        d.prompt = templates.get("gqr");
        d.parser = ParserKind::SingleLine;
    } else if (id == StrategyId::kwr()) {
        d.description =
            "Keyword extraction: reduce the query to its key terms, nouns and "
            "subjects first. Suits keyword-oriented search backends and queries "
            "padded with conversational filler.";
        d.prompt = templates.get("kwr");
        d.parser = ParserKind::KeywordList;
    } else if (id == StrategyId::par()) {
        d.description =
            "Pseudo-answer: draft a short plausible answer and retrieve with it. "
            "Suits fact-seeking questions where answer wording matches documents "
            "better than question wording.";
        d.prompt = templates.get("par");
        d.parser = ParserKind::Passthrough;
    } else if (id == StrategyId::cce()) {
        d.description =
            "Core content extraction: keep only the essential information need, "
            "discarding background story and redundant qualifiers. Suits long, "
            "narrative or multi-clause queries.";
        d.prompt = templates.get("cce");
        d.parser = ParserKind::SingleLine;
    } else if (id == StrategyId::baseline_rewrite()) {
        d.description = "Single general-purpose rewrite for web search.";
        d.prompt = templates.get("baseline_rewrite");
        d.parser = ParserKind::SingleLine;
    } else if (id == StrategyId::hyde()) {
        d.description = "Hypothetical passage: retrieve with a generated document.";
        d.prompt = templates.get("hyde");
        d.parser = ParserKind::Passthrough;
    } else {
        throw Error(ErrorCode::UnknownStrategy, "no built-in strategy: " + id.name());
    }
    return d;
}

RewrittenQuery rewrite(const StrategyPool& pool, const StrategyId& strategy,
                       const Query& query, llm::Completer& completer) {
    const StrategyDescriptor& descriptor = pool.get(strategy);
    return RewrittenQuery{strategy, run_strategy(descriptor, query, completer), query};
}

RewrittenQuery rewrite_baseline(const StrategyId& kind, const Query& query,
                                llm::Completer& completer,
                                const llm::TemplateRegistry& templates) {
    if (kind != StrategyId::baseline_rewrite() && kind != StrategyId::hyde()) {
        throw Error(ErrorCode::UnknownStrategy,
                    "not a single-rewrite baseline: " + kind.name());
    }
    const StrategyDescriptor descriptor = builtin_descriptor(kind, templates);
    return RewrittenQuery{kind, run_strategy(descriptor, query, completer), query};
}

std::vector<RewrittenQuery> rewrite_fusion_variants(const Query& query, int count,
                                                    llm::Completer& completer,
                                                    const llm::TemplateRegistry& templates,
                                                    int* shortfall) {
    if (count < 1) {
        throw Error(ErrorCode::InvalidConfig, "variant count must be at least 1");
    }
    validate_query(query);
    llm::ChatRequest request;
    request.user = llm::render(templates.get("fusion_variants"),
                               {{"count", std::to_string(count)}, {"query", query.text}});
    const llm::ChatResponse response = completer.complete(request);
    std::vector<std::string> parsed = parse_numbered_list(response.text);
    if (parsed.size() > static_cast<std::size_t>(count)) {
        parsed.resize(static_cast<std::size_t>(count));
    }
    if (parsed.empty()) {
        throw Error(ErrorCode::ParseFailure, "no variants parsed from completion");
    }
    if (shortfall != nullptr) {
        *shortfall = count - static_cast<int>(parsed.size());
    }
    std::vector<RewrittenQuery> out;
    out.reserve(parsed.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        std::string variant = parsed[i];
        if (variant.size() > kMaxRewriteChars) {
            variant = text::truncate_at_whitespace(variant, kMaxRewriteChars);
        }
        out.push_back(RewrittenQuery{StrategyId::fusion_variant(static_cast<int>(i) + 1),
                                     std::move(variant), query});
    }
    return out;
}

RewriteOutcome rewrite_with_fallback(const StrategyPool& pool, const StrategyId& strategy,
                                     const Query& query, llm::Completer& completer) {
    RewriteOutcome outcome;
    try {
        outcome.rewrite = rewrite(pool, strategy, query, completer);
    } catch (const Error& err) {
        if (err.code() != ErrorCode::ParseFailure && err.code() != ErrorCode::EmptyCompletion) {
            throw;
        }
        outcome.rewrite = RewrittenQuery{strategy, text::trim(query.text), query};
        outcome.fallback = true;
        outcome.note = err.what();
        return outcome;
    }
    if (outcome.rewrite.text.size() > kMaxRewriteChars) {
        outcome.rewrite.text = text::truncate_at_whitespace(outcome.rewrite.text, kMaxRewriteChars);
        outcome.truncated = true;
    }
    return outcome;
}

}  // namespace dmqr::rewrite
