#include "dmqr/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <utility>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmqr::pipeline {

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::json;

std::int64_t ms_between(Clock::time_point from, Clock::time_point to) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(to - from).count();
}

/// Failures that degrade a single stage instead of aborting the query.
/// Wiring and template mistakes stay fatal so they cannot hide behind
/// fallback flags.
bool degradable(ErrorCode code) {
    switch (code) {
        case ErrorCode::Transport:
        case ErrorCode::Auth:
        case ErrorCode::BadRequest:
        case ErrorCode::RateLimited:
        case ErrorCode::EmptyCompletion:
        case ErrorCode::ParseFailure:
        case ErrorCode::ProtocolError:
            return true;
        default:
            return false;
    }
}

/// Runs one rewrite attempt with the degradation contract: unusable or
/// failed completions fall back to the original query text, over-long
/// retrieval strings are cut at the last whitespace.
RewriteRecord guarded_rewrite(const StrategyId& strategy, const Query& query,
                              const std::function<RewrittenQuery()>& attempt) {
    RewriteRecord record;
    record.strategy = strategy;
    try {
        record.text = attempt().text;
    } catch (const Error& err) {
        if (!degradable(err.code())) {
            throw;
        }
        record.fallback = true;
        record.note = err.what();
        record.text = text::trim(query.text);
    }
    if (record.text.size() > rewrite::kMaxRewriteChars) {
        record.text = text::truncate_at_whitespace(record.text, rewrite::kMaxRewriteChars);
        record.truncated = true;
    }
    return record;
}

}  // namespace

Method method_from_string(const std::string& s) {
    std::string key = text::to_lower(text::trim(s));
    for (char& ch : key) {
        if (ch == '-' || ch == ' ') {
            ch = '_';
        }
    }
    if (key == "oqr" || key == "original") return Method::Oqr;
    if (key == "rewrite" || key == "baseline_rewrite") return Method::Rewrite;
    if (key == "hyde") return Method::Hyde;
    if (key == "rag_fusion" || key == "ragfusion" || key == "fusion") return Method::RagFusion;
    if (key == "dmqr") return Method::Dmqr;
    if (key == "dmqr_adaptive") return Method::DmqrAdaptive;
    throw Error(ErrorCode::InvalidConfig,
                "unknown method '" + s +
                    "' (expected oqr, rewrite, hyde, rag_fusion, dmqr or dmqr_adaptive)");
}

std::string to_string(Method method) {
    switch (method) {
        case Method::Oqr: return "OQR";
        case Method::Rewrite: return "REWRITE";
        case Method::Hyde: return "HYDE";
        case Method::RagFusion: return "RAG_FUSION";
        case Method::Dmqr: return "DMQR";
        case Method::DmqrAdaptive: return "DMQR_ADAPTIVE";
    }
    return "DMQR";
}

std::vector<Method> all_methods() {
    return {Method::Oqr,       Method::Rewrite, Method::Hyde,
            Method::RagFusion, Method::Dmqr,    Method::DmqrAdaptive};
}

std::string assemble_context(const Query& query, const std::vector<rank::FusedDoc>& docs,
                             int k, int char_budget, const llm::TemplateRegistry& templates) {
    if (k < 1) {
        throw Error(ErrorCode::InvalidConfig, "context size must be at least 1");
    }
    if (char_budget < 1) {
        throw Error(ErrorCode::InvalidConfig, "context character budget must be at least 1");
    }
    const std::size_t n = std::min(docs.size(), static_cast<std::size_t>(k));
    std::string block;
    for (std::size_t i = 0; i < n; ++i) {
        const Document& doc = docs[i].doc;
        block += "[" + std::to_string(i + 1) + "]";
        const std::string title = text::truncate_at_whitespace(
            text::collapse_whitespace(doc.title), static_cast<std::size_t>(char_budget));
        if (!title.empty()) {
            block += " " + title;
        }
        block += "\n";
        block += text::truncate_at_whitespace(text::trim(doc.content),
                                              static_cast<std::size_t>(char_budget));
        block += "\n";
        if (i + 1 < n) {
            block += "\n";
        }
    }
    if (n == 0) {
        block = "(no documents retrieved)";
    }
    return llm::render(templates.get("answer"), {{"query", query.text}, {"context", block}});
}

PipelineTrace run(const Query& query, const Options& options, const Deps& deps) {
    validate_query(query);
    validate_config(options.config);
    if (deps.completer == nullptr || deps.retriever == nullptr || deps.templates == nullptr) {
        throw Error(ErrorCode::InvalidConfig,
                    "pipeline needs a completer, a retriever and a template registry");
    }
    const bool dmqr_method =
        options.method == Method::Dmqr || options.method == Method::DmqrAdaptive;
    if (dmqr_method && deps.pool == nullptr) {
        throw Error(ErrorCode::InvalidConfig, "DMQR methods need a strategy pool");
    }
    if (options.config.reranker_mode == RerankerMode::Remote && deps.reranker == nullptr) {
        throw Error(ErrorCode::InvalidConfig, "remote reranker mode needs an endpoint config");
    }
    if (options.method == Method::RagFusion && options.fusion_count < 1) {
        throw Error(ErrorCode::InvalidConfig, "fusion count must be at least 1");
    }
    if (options.context_char_budget < 1) {
        throw Error(ErrorCode::InvalidConfig, "context character budget must be at least 1");
    }

    const Clock::time_point t0 = Clock::now();
    const llm::TemplateRegistry& templates = *deps.templates;

    PipelineTrace trace;
    trace.query = query;
    trace.method = options.method;
    trace.config = options.config;

    const auto emit = [&](const std::string& event, json fields) {
        if (deps.events != nullptr) {
            deps.events->emit(event, fields);
        }
    };
    const auto add_timing = [&](const std::string& stage, std::int64_t start, std::int64_t end) {
        trace.timings.push_back(trace::StageTiming{stage, start, end});
    };

    // Selection: which pool strategies rewrite this query.
    std::vector<StrategyId> chosen;
    if (dmqr_method) {
        const rewrite::StrategyPool& pool = *deps.pool;
        const bool adaptive = options.method == Method::DmqrAdaptive ||
                              options.config.selection_mode == SelectionMode::Adaptive;
        if (adaptive && !pool.empty()) {
            const std::int64_t start = ms_between(t0, Clock::now());
            try {
                const std::vector<select::Demo>& demos =
                    (deps.demos != nullptr && !deps.demos->empty()) ? *deps.demos
                                                                    : select::builtin_demos();
                trace.selection =
                    select::select_strategies(query, pool, demos, *deps.completer, templates);
                chosen = trace.selection->chosen;
            } catch (const Error& err) {
                if (!degradable(err.code())) {
                    throw;
                }
                trace.selection_failed = true;
                trace.selection_error = err.what();
                chosen = pool.ids();
            }
            add_timing("selection", start, ms_between(t0, Clock::now()));
            json chosen_names = json::array();
            for (const auto& id : chosen) chosen_names.push_back(id.name());
            emit("selection", json{{"chosen", chosen_names},
                                   {"fallback", trace.selection && trace.selection->fallback_used},
                                   {"failed", trace.selection_failed}});
        } else {
            chosen = pool.ids();
        }
    }

    // Rewriting.
    std::vector<RewrittenQuery> rewrites;
    {
        const std::int64_t start = ms_between(t0, Clock::now());
        if (options.method == Method::Rewrite || options.method == Method::Hyde) {
            const StrategyId kind = options.method == Method::Rewrite
                                        ? StrategyId::baseline_rewrite()
                                        : StrategyId::hyde();
            RewriteRecord record = guarded_rewrite(kind, query, [&] {
                return rewrite::rewrite_baseline(kind, query, *deps.completer, templates);
            });
            rewrites.push_back(RewrittenQuery{kind, record.text, query});
            trace.rewrites.push_back(std::move(record));
        } else if (options.method == Method::RagFusion) {
            try {
                int shortfall = 0;
                std::vector<RewrittenQuery> variants = rewrite::rewrite_fusion_variants(
                    query, options.fusion_count, *deps.completer, templates, &shortfall);
                trace.fusion_shortfall = shortfall;
                for (const RewrittenQuery& variant : variants) {
                    RewriteRecord record;
                    record.strategy = variant.strategy;
                    record.text = variant.text;
                    trace.rewrites.push_back(std::move(record));
                    rewrites.push_back(variant);
                }
            } catch (const Error& err) {
                if (!degradable(err.code())) {
                    throw;
                }
                // No variant parsed: fall back to plain original-query
                // retrieval and say so in the trace.
                trace.fusion_shortfall = options.fusion_count;
                RewriteRecord record;
                record.strategy = StrategyId::fusion_variant(1);
                record.fallback = true;
                record.note = err.what();
                trace.rewrites.push_back(std::move(record));
            }
        } else if (dmqr_method) {
            for (const StrategyId& strategy : chosen) {
                RewriteRecord record = guarded_rewrite(strategy, query, [&] {
                    return rewrite::rewrite(*deps.pool, strategy, query, *deps.completer);
                });
                rewrites.push_back(RewrittenQuery{strategy, record.text, query});
                trace.rewrites.push_back(std::move(record));
            }
        }
        if (!trace.rewrites.empty()) {
            add_timing("rewriting", start, ms_between(t0, Clock::now()));
            for (const RewriteRecord& record : trace.rewrites) {
                emit("rewrite", json{{"strategy", record.strategy.name()},
                                     {"fallback", record.fallback},
                                     {"truncated", record.truncated}});
            }
        }
    }

    trace.query_set = build_query_set(query, std::move(rewrites));
    const std::vector<QuerySetMember> members = query_set_members(trace.query_set);

    // Retrieval plan: the single-rewrite baselines retrieve with the rewrite
    // alone (traditional rewrite-then-retrieve); everything else fans out
    // over the whole query set.
    std::vector<std::size_t> plan;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if ((options.method == Method::Rewrite || options.method == Method::Hyde) &&
            members[i].strategy == StrategyId::original()) {
            continue;
        }
        plan.push_back(i);
    }

    // Concurrent fan-out. Results land in a slot per planned member, so the
    // aggregation order is the query-set order no matter which call finishes
    // first; concurrent and sequential runs produce the same trace.
    std::vector<RetrievalRecord> records(plan.size());
    const Clock::time_point fanout_start = Clock::now();
    const std::int64_t retrieval_start = ms_between(t0, fanout_start);
    {
        const int limit = trace.config.per_query_limit;
        const std::int64_t budget = options.retrieval_budget_ms;
        const auto retrieve_one = [&](const QuerySetMember& member) {
            RetrievalRecord record;
            record.strategy = member.strategy;
            record.query_text = member.text;
            if (budget > 0 && ms_between(fanout_start, Clock::now()) >= budget) {
                record.skipped_budget = true;
                return record;
            }
            const Clock::time_point call_start = Clock::now();
            try {
                bool hit = false;
                RankedList list =
                    deps.cache != nullptr
                        ? deps.cache->cached_search(*deps.retriever, member.text, limit, &hit)
                        : deps.retriever->search(member.text, limit);
                record.cache_hit = hit;
                for (Document& doc : list.docs) {
                    doc.retrieved_by = member.strategy;
                }
                record.list = std::move(list);
            } catch (const Error& err) {
                record.failed = true;
                record.error = err.what();
            } catch (const std::exception& ex) {
                record.failed = true;
                record.error = ex.what();
            }
            record.wall_ms = ms_between(call_start, Clock::now());
            return record;
        };

        const int bound = std::max(
            1, std::min(trace.config.concurrency_bound, static_cast<int>(plan.size())));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(bound)
#endif
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(plan.size()); ++i) {
            records[static_cast<std::size_t>(i)] =
                retrieve_one(members[plan[static_cast<std::size_t>(i)]]);
        }
        (void)bound;
    }
    add_timing("retrieval", retrieval_start, ms_between(t0, Clock::now()));

    for (const RetrievalRecord& record : records) {
        trace.candidates_before_dedup += static_cast<int>(record.list.docs.size());
        if (record.cache_hit) {
            ++trace.cache_hits;
        } else if (!record.skipped_budget && deps.cache != nullptr) {
            ++trace.cache_misses;
        }
        emit("retrieval", json{{"strategy", record.strategy.name()},
                               {"docs", record.list.docs.size()},
                               {"cache_hit", record.cache_hit},
                               {"failed", record.failed},
                               {"skipped_budget", record.skipped_budget}});
    }

    // Fusion and reranking.
    {
        const std::int64_t start = ms_between(t0, Clock::now());
        std::vector<RankedList> lists;
        lists.reserve(records.size());
        for (const RetrievalRecord& record : records) {
            lists.push_back(record.list);
        }
        std::vector<rank::FusedDoc> survivors = rank::deduplicate(lists);
        trace.dedup_survivors = static_cast<int>(survivors.size());

        switch (trace.config.reranker_mode) {
            case RerankerMode::Rrf:
                trace.fused = rank::rrf_fuse(lists, trace.config.rrf_constant);
                break;
            case RerankerMode::Lexical:
                trace.fused = rank::lexical_rerank(query, std::move(survivors));
                break;
            case RerankerMode::Remote:
                try {
                    trace.fused = rank::remote_rerank(query, survivors, *deps.reranker);
                } catch (const Error& err) {
                    trace.reranker_fallback = true;
                    trace.reranker_error = err.what();
                    trace.fused = rank::rrf_fuse(lists, trace.config.rrf_constant);
                }
                break;
        }
        trace.context = rank::top_k(trace.fused, trace.config.context_size);

        // Diversity stats want one list per query-set member; members the
        // plan skipped contribute an empty list.
        std::vector<RankedList> aligned(members.size());
        for (std::size_t i = 0; i < members.size(); ++i) {
            aligned[i].query = members[i].text;
        }
        for (std::size_t i = 0; i < plan.size(); ++i) {
            aligned[plan[i]] = records[i].list;
        }
        trace.diversity = trace::diversity_stats(trace.query_set, aligned);

        trace.retrievals = std::move(records);
        add_timing("ranking", start, ms_between(t0, Clock::now()));
        emit("fusion", json{{"candidates", trace.candidates_before_dedup},
                            {"survivors", trace.dedup_survivors},
                            {"context", trace.context.size()},
                            {"reranker_fallback", trace.reranker_fallback}});
    }

    // Answer generation; failures here abort the query.
    {
        const std::int64_t start = ms_between(t0, Clock::now());
        llm::ChatRequest request;
        request.user = assemble_context(query, trace.context, trace.config.context_size,
                                        options.context_char_budget, templates);
        request.temperature = options.answer_temperature;
        const llm::ChatResponse response = deps.completer->complete(request);
        trace.answer.text = response.text;
        for (const rank::FusedDoc& fused : trace.context) {
            trace.answer.context_keys.push_back(fused.doc.key);
        }
        add_timing("answer", start, ms_between(t0, Clock::now()));
        emit("answer", json{{"chars", trace.answer.text.size()},
                            {"context_docs", trace.answer.context_keys.size()}});
    }

    add_timing("total", 0, ms_between(t0, Clock::now()));
    return trace;
}

nlohmann::json trace_to_json(const PipelineTrace& trace) {
    json retrievals = json::array();
    for (const RetrievalRecord& record : trace.retrievals) {
        retrievals.push_back(json{{"strategy", record.strategy.name()},
                                  {"query", record.query_text},
                                  {"list", json(record.list)},
                                  {"cache_hit", record.cache_hit},
                                  {"failed", record.failed},
                                  {"skipped_budget", record.skipped_budget},
                                  {"error", record.error},
                                  {"wall_ms", record.wall_ms}});
    }

    json rewrites = json::array();
    for (const RewriteRecord& record : trace.rewrites) {
        rewrites.push_back(json{{"strategy", record.strategy.name()},
                                {"text", record.text},
                                {"fallback", record.fallback},
                                {"truncated", record.truncated},
                                {"note", record.note}});
    }

    const auto fused_json = [](const std::vector<rank::FusedDoc>& docs) {
        json out = json::array();
        for (const rank::FusedDoc& fused : docs) {
            json contributing = json::array();
            for (const rank::Contribution& c : fused.contributing) {
                contributing.push_back(json{
                    {"strategy", c.strategy.name()}, {"query", c.query}, {"rank", c.rank}});
            }
            out.push_back(json{{"doc", json(fused.doc)},
                               {"fused_score", fused.fused_score},
                               {"contributing", contributing}});
        }
        return out;
    };

    json selection = nullptr;
    if (trace.selection.has_value()) {
        json chosen = json::array();
        for (const StrategyId& id : trace.selection->chosen) {
            chosen.push_back(id.name());
        }
        selection = json{{"chosen", chosen},
                         {"raw", trace.selection->raw},
                         {"fallback_used", trace.selection->fallback_used}};
    }

    json keys = json::array();
    for (const DocumentKey& key : trace.answer.context_keys) {
        keys.push_back(key.value);
    }

    json timings = json::array();
    for (const trace::StageTiming& timing : trace.timings) {
        timings.push_back(json{{"stage", timing.stage},
                               {"start_ms", timing.start_ms},
                               {"end_ms", timing.end_ms},
                               {"wall_ms", timing.wall_ms()}});
    }

    return json{{"query", json(trace.query)},
                {"method", to_string(trace.method)},
                {"config", json(trace.config)},
                {"selection", selection},
                {"selection_failed", trace.selection_failed},
                {"selection_error", trace.selection_error},
                {"query_set", json(trace.query_set)},
                {"rewrites", rewrites},
                {"fusion_shortfall", trace.fusion_shortfall},
                {"retrievals", retrievals},
                {"candidates_before_dedup", trace.candidates_before_dedup},
                {"dedup_survivors", trace.dedup_survivors},
                {"fused", fused_json(trace.fused)},
                {"reranker_fallback", trace.reranker_fallback},
                {"reranker_error", trace.reranker_error},
                {"context", fused_json(trace.context)},
                {"answer", json{{"text", trace.answer.text}, {"context_keys", keys}}},
                {"diversity",
                 json{{"labels", trace.diversity.labels},
                      {"jaccard", trace.diversity.jaccard},
                      {"unique_docs", trace.diversity.unique_docs}}},
                {"timings", timings},
                {"cache", json{{"hits", trace.cache_hits}, {"misses", trace.cache_misses}}}};
}

}  // namespace dmqr::pipeline
