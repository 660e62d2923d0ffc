#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dmqr/llm.hpp"
#include "dmqr/model.hpp"
#include "dmqr/rewrite.hpp"
#include "dmqr/templates.hpp"

namespace dmqr::select {

/// Few-shot pair shown to the selector: a query and the strategies a
/// careful operator would pick for it.
struct Demo {
    std::string query;
    std::vector<StrategyId> chosen;
};

struct SelectionResult {
    std::vector<StrategyId> chosen;  // pool order, no duplicates, never empty
    std::string raw;                 // verbatim completion, kept for the trace
    bool fallback_used = false;      // nothing parsed, whole pool substituted
};

std::string format_strategy_descriptions(const rewrite::StrategyPool& pool);
std::string format_demonstrations(const std::vector<Demo>& demos);

/// One LLM call: descriptions + demonstrations + query in, subset out.
/// Strategy mentions are matched case-insensitively on id or name anywhere
/// in the completion; the result is deduplicated and re-sorted to pool
/// order. Unparseable output falls back to the whole pool. Completer errors
/// propagate so the caller can degrade to fixed-all mode.
SelectionResult select_strategies(const Query& query, const rewrite::StrategyPool& pool,
                                  const std::vector<Demo>& demos, llm::Completer& completer,
                                  const llm::TemplateRegistry& templates);

/// JSON list of {query, chosen: [ids]}.
std::vector<Demo> load_demos(const std::filesystem::path& path);

std::vector<Demo> builtin_demos();

}  // namespace dmqr::select
