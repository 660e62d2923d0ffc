#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dmqr/llm.hpp"
#include "dmqr/model.hpp"
#include "dmqr/templates.hpp"

namespace dmqr::rewrite {

/// How a strategy's completion is turned into a retrieval string.
enum class ParserKind {
    SingleLine,    // first non-empty line, labels and quotes stripped
    KeywordList,   // comma/space separated keywords, joined with spaces
    Passthrough,   // whole completion, trimmed (pseudo-answers, passages)
    NumberedList,  // "1. ..." lines, one string each
};

struct StrategyDescriptor {
    StrategyId id;
    std::string description;  // role + query types it suits, shown to the selector
    llm::PromptTemplate prompt;
    ParserKind parser = ParserKind::SingleLine;
};

/// Ordered strategy registry. Iteration order is registration order and is
/// what every "pool order" rule in the engine refers to.
class StrategyPool {
public:
    static StrategyPool dmqr_default(const llm::TemplateRegistry& templates);

    void add(StrategyDescriptor descriptor);
    bool has(const StrategyId& id) const;
    const StrategyDescriptor& get(const StrategyId& id) const;
    std::size_t order_index(const StrategyId& id) const;
    const std::vector<StrategyDescriptor>& descriptors() const { return ordered_; }
    std::vector<StrategyId> ids() const;
    std::size_t size() const { return ordered_.size(); }
    bool empty() const { return ordered_.empty(); }

private:
    std::vector<StrategyDescriptor> ordered_;
};

/// Descriptor for any built-in strategy id, including the single-rewrite
/// baselines that never live in the DMQR pool. Throws UnknownStrategy.
StrategyDescriptor builtin_descriptor(const StrategyId& id,
                                      const llm::TemplateRegistry& templates);

std::string parse_single_line(const std::string& completion);
std::string parse_keyword_list(const std::string& completion);
std::string parse_passthrough(const std::string& completion);
std::vector<std::string> parse_numbered_list(const std::string& completion);

/// Retrieval strings longer than this are cut at the last whitespace before
/// the limit; the pipeline records the truncation in the trace.
inline constexpr std::size_t kMaxRewriteChars = 512;

/// Render the strategy prompt with {query}, complete, parse. Throws
/// ParseFailure when the completion yields an empty retrieval string;
/// completer errors propagate unchanged.
RewrittenQuery rewrite(const StrategyPool& pool, const StrategyId& strategy,
                       const Query& query, llm::Completer& completer);

/// Same contract for the one-shot baselines (BASELINE_REWRITE, HYDE).
RewrittenQuery rewrite_baseline(const StrategyId& kind, const Query& query,
                                llm::Completer& completer,
                                const llm::TemplateRegistry& templates);

/// One batched call for `count` paraphrase variants. Returns the variants
/// that parsed (at least one, else ParseFailure); when fewer than `count`
/// parse the shortfall is written through `shortfall` if given.
std::vector<RewrittenQuery> rewrite_fusion_variants(const Query& query, int count,
                                                    llm::Completer& completer,
                                                    const llm::TemplateRegistry& templates,
                                                    int* shortfall = nullptr);

struct RewriteOutcome {
    RewrittenQuery rewrite;
    bool fallback = false;   // parse failed, text is the original query
    bool truncated = false;  // cut at kMaxRewriteChars
    std::string note;        // error text when fallback is set
};

/// rewrite() with the ParseFailure contract applied: on unusable output the
/// strategy falls back to the original query text instead of aborting.
/// Completer errors still propagate.
RewriteOutcome rewrite_with_fallback(const StrategyPool& pool, const StrategyId& strategy,
                                     const Query& query, llm::Completer& completer);

}  // namespace dmqr::rewrite
