#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmqr/llm.hpp"
#include "dmqr/model.hpp"
#include "dmqr/ranking.hpp"
#include "dmqr/retrieval.hpp"
#include "dmqr/rewrite.hpp"
#include "dmqr/selection.hpp"
#include "dmqr/templates.hpp"
#include "dmqr/tracing.hpp"

namespace dmqr::pipeline {

/// What feeds the retriever.
///   Oqr          — the original query, nothing else.
///   Rewrite      — one rewritten query replaces the original.
///   Hyde         — one hypothetical passage replaces the original.
///   RagFusion    — original plus N paraphrase variants from one call.
///   Dmqr         — original plus one rewrite per pool strategy
///                  (fixed or adaptive per config.selection_mode).
///   DmqrAdaptive — Dmqr with adaptive selection forced on.
enum class Method { Oqr, Rewrite, Hyde, RagFusion, Dmqr, DmqrAdaptive };

Method method_from_string(const std::string& s);
std::string to_string(Method method);
std::vector<Method> all_methods();

struct Options {
    PipelineConfig config;
    Method method = Method::Dmqr;
    int fusion_count = 4;              // variants for RagFusion
    double answer_temperature = 0.2;
    int context_char_budget = 1000;    // per document, title + content each
    std::int64_t retrieval_budget_ms = 0;  // 0 = no cap on the fan-out stage
};

/// Wiring. completer, retriever and templates are always required; pool is
/// required for the Dmqr methods, reranker for RerankerMode::Remote. cache,
/// demos and events are optional.
struct Deps {
    llm::Completer* completer = nullptr;
    retrieval::Retriever* retriever = nullptr;
    retrieval::SearchCache* cache = nullptr;
    const rewrite::StrategyPool* pool = nullptr;
    const llm::TemplateRegistry* templates = nullptr;
    const std::vector<select::Demo>* demos = nullptr;
    const rank::RemoteRerankConfig* reranker = nullptr;
    trace::EventSink* events = nullptr;
};

struct RewriteRecord {
    StrategyId strategy;
    std::string text;
    bool fallback = false;   // rewrite unusable, original text substituted
    bool truncated = false;
    std::string note;        // error text when fallback is set
};

struct RetrievalRecord {
    StrategyId strategy;
    std::string query_text;
    RankedList list;
    bool cache_hit = false;
    bool failed = false;         // retriever threw; list left empty
    bool skipped_budget = false; // retrieval budget exhausted before this call
    std::string error;
    std::int64_t wall_ms = 0;
};

struct Answer {
    std::string text;
    std::vector<DocumentKey> context_keys;  // documents the LLM actually saw
};

/// Everything one run did, in execution order. Every stage output here is
/// recomputable from the stage inputs stored alongside it.
struct PipelineTrace {
    Query query;
    Method method = Method::Dmqr;
    PipelineConfig config;

    std::optional<select::SelectionResult> selection;
    bool selection_failed = false;  // selector call errored, whole pool used
    std::string selection_error;

    QuerySet query_set;
    std::vector<RewriteRecord> rewrites;
    int fusion_shortfall = 0;

    std::vector<RetrievalRecord> retrievals;  // query-set order
    int candidates_before_dedup = 0;
    int dedup_survivors = 0;
    std::vector<rank::FusedDoc> fused;
    bool reranker_fallback = false;  // remote reranker failed, fused via RRF
    std::string reranker_error;

    std::vector<rank::FusedDoc> context;  // top-K of fused
    Answer answer;

    trace::DiversityStats diversity;
    std::vector<trace::StageTiming> timings;
    int cache_hits = 0;
    int cache_misses = 0;
};

/// Full prompt for the answer model: the question, then documents numbered
/// 1..min(K, |docs|) with title and content each cut at `char_budget` on the
/// last whitespace. Zero documents get an explicit marker instead.
std::string assemble_context(const Query& query, const std::vector<rank::FusedDoc>& docs,
                             int k, int char_budget, const llm::TemplateRegistry& templates);

/// One query end to end. Individual rewrite and retrieval failures degrade
/// with flags in the trace; selection failures degrade to the whole pool;
/// remote reranker failures degrade to RRF. Errors from the answer stage,
/// and configuration errors, propagate.
PipelineTrace run(const Query& query, const Options& options, const Deps& deps);

nlohmann::json trace_to_json(const PipelineTrace& trace);

}  // namespace dmqr::pipeline
