#include "dmqr/model.hpp"

#include "dmqr/errors.hpp"
#include "dmqr/hash.hpp"
#include "dmqr/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace dmqr {

StrategyId::StrategyId(std::string name) {
    name_ = text::trim(name);
    std::transform(name_.begin(), name_.end(), name_.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
}

StrategyId StrategyId::fusion_variant(int index) {
    return StrategyId("FUSION_VARIANT_" + std::to_string(index));
}

bool StrategyId::is_fusion_variant() const {
    return name_.rfind("FUSION_VARIANT", 0) == 0;
}

int StrategyId::canonical_rank() const {
    if (name_ == "GQR") return 0;
    if (name_ == "KWR") return 1;
    if (name_ == "PAR") return 2;
    if (name_ == "CCE") return 3;
    if (name_ == "BASELINE_REWRITE") return 4;
    if (name_ == "HYDE") return 5;
    if (is_fusion_variant()) return 6;
    return 100;
}

void validate_query(const Query& q) {
    if (text::trim(q.text).empty()) {
        throw Error(ErrorCode::EmptyQuery, "query text is empty");
    }
}

QuerySet build_query_set(Query original, std::vector<RewrittenQuery> rewrites) {
    validate_query(original);
    std::set<std::string> seen;
    for (const auto& r : rewrites) {
        if (r.strategy.empty()) {
            throw Error(ErrorCode::UnknownStrategy, "rewrite without a strategy id");
        }
        if (!seen.insert(r.strategy.name()).second) {
            throw Error(ErrorCode::DuplicateStrategy,
                        "two rewrites carry strategy " + r.strategy.name());
        }
    }
    std::stable_sort(rewrites.begin(), rewrites.end(),
                     [](const RewrittenQuery& a, const RewrittenQuery& b) {
                         return a.strategy.canonical_rank() < b.strategy.canonical_rank();
                     });
    return QuerySet{std::move(original), std::move(rewrites)};
}

std::vector<QuerySetMember> query_set_members(const QuerySet& qs) {
    std::vector<QuerySetMember> members;
    members.reserve(qs.size());
    members.push_back({StrategyId::original(), qs.original.text});
    for (const auto& r : qs.rewrites) {
        members.push_back({r.strategy, r.text});
    }
    return members;
}

std::string normalize_url(std::string_view url) {
    std::string u = text::trim(url);

    // Drop the fragment.
    if (auto hash_pos = u.find('#'); hash_pos != std::string::npos) {
        u.resize(hash_pos);
    }

    // Lowercase scheme and host; the path and query keep their case.
    std::size_t host_begin = 0;
    if (auto scheme_end = u.find("://"); scheme_end != std::string::npos) {
        for (std::size_t i = 0; i < scheme_end; ++i) {
            u[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(u[i])));
        }
        host_begin = scheme_end + 3;
    }
    std::size_t host_end = u.find('/', host_begin);
    if (host_end == std::string::npos) host_end = u.size();
    for (std::size_t i = host_begin; i < host_end; ++i) {
        u[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(u[i])));
    }

    while (u.size() > host_end && u.back() == '/') {
        u.pop_back();
    }
    return u;
}

DocumentKey document_key(const std::optional<std::string>& url, const std::string& content) {
    if (url && !text::trim(*url).empty()) {
        return DocumentKey{"url:" + normalize_url(*url)};
    }
    std::string normalized = text::collapse_whitespace(content);
    if (normalized.empty()) {
        throw Error(ErrorCode::EmptyDocument, "document has neither url nor content");
    }
    return DocumentKey{"sha256:" + hash::sha256_hex(normalized)};
}

void validate_ranked_list(const RankedList& list) {
    std::set<std::string> keys;
    for (std::size_t i = 0; i < list.docs.size(); ++i) {
        const auto& d = list.docs[i];
        if (d.retrieval_rank != static_cast<int>(i) + 1) {
            throw Error(ErrorCode::ProtocolError,
                        "ranked list has rank " + std::to_string(d.retrieval_rank) +
                            " at position " + std::to_string(i + 1));
        }
        if (!keys.insert(d.key.value).second) {
            throw Error(ErrorCode::ProtocolError, "duplicate key in ranked list: " + d.key.value);
        }
    }
}

const char* to_string(SelectionMode m) {
    return m == SelectionMode::FixedAll ? "fixed_all" : "adaptive";
}

const char* to_string(RerankerMode m) {
    switch (m) {
        case RerankerMode::Rrf: return "rrf";
        case RerankerMode::Lexical: return "lexical";
        case RerankerMode::Remote: return "remote";
    }
    return "rrf";
}

SelectionMode selection_mode_from_string(const std::string& s) {
    if (s == "fixed_all" || s == "all") return SelectionMode::FixedAll;
    if (s == "adaptive") return SelectionMode::Adaptive;
    throw Error(ErrorCode::InvalidConfig, "unknown selection mode: " + s);
}

RerankerMode reranker_mode_from_string(const std::string& s) {
    if (s == "rrf") return RerankerMode::Rrf;
    if (s == "lexical") return RerankerMode::Lexical;
    if (s == "remote") return RerankerMode::Remote;
    throw Error(ErrorCode::InvalidConfig, "unknown reranker mode: " + s);
}

void validate_config(const PipelineConfig& cfg) {
    if (cfg.per_query_limit < 1) throw Error(ErrorCode::InvalidConfig, "per_query_limit must be >= 1");
    if (cfg.context_size < 1) throw Error(ErrorCode::InvalidConfig, "context_size must be >= 1");
    if (cfg.rrf_constant < 1) throw Error(ErrorCode::InvalidConfig, "rrf_constant must be >= 1");
    if (cfg.concurrency_bound < 1) throw Error(ErrorCode::InvalidConfig, "concurrency_bound must be >= 1");
}

void to_json(nlohmann::json& j, const StrategyId& s) { j = s.name(); }

void from_json(const nlohmann::json& j, StrategyId& s) {
    s = StrategyId(j.get<std::string>());
}

void to_json(nlohmann::json& j, const Query& q) {
    j = nlohmann::json{{"text", q.text}, {"id", q.id}};
}

void from_json(const nlohmann::json& j, Query& q) {
    j.at("text").get_to(q.text);
    j.at("id").get_to(q.id);
}

void to_json(nlohmann::json& j, const RewrittenQuery& r) {
    j = nlohmann::json{{"strategy", r.strategy}, {"text", r.text}, {"source", r.source}};
}

void from_json(const nlohmann::json& j, RewrittenQuery& r) {
    j.at("strategy").get_to(r.strategy);
    j.at("text").get_to(r.text);
    j.at("source").get_to(r.source);
}

void to_json(nlohmann::json& j, const QuerySet& qs) {
    j = nlohmann::json{{"original", qs.original}, {"rewrites", qs.rewrites}};
}

void from_json(const nlohmann::json& j, QuerySet& qs) {
    j.at("original").get_to(qs.original);
    j.at("rewrites").get_to(qs.rewrites);
}

void to_json(nlohmann::json& j, const DocumentKey& k) { j = k.value; }

void from_json(const nlohmann::json& j, DocumentKey& k) { j.get_to(k.value); }

void to_json(nlohmann::json& j, const Document& d) {
    j = nlohmann::json{{"key", d.key},
                       {"title", d.title},
                       {"content", d.content},
                       {"url", nullptr},
                       {"retrieved_by", d.retrieved_by},
                       {"retrieval_rank", d.retrieval_rank}};
    if (d.url) j["url"] = *d.url;
}

void from_json(const nlohmann::json& j, Document& d) {
    j.at("key").get_to(d.key);
    j.at("title").get_to(d.title);
    j.at("content").get_to(d.content);
    if (j.contains("url") && !j.at("url").is_null()) {
        d.url = j.at("url").get<std::string>();
    } else {
        d.url.reset();
    }
    j.at("retrieved_by").get_to(d.retrieved_by);
    j.at("retrieval_rank").get_to(d.retrieval_rank);
}

void to_json(nlohmann::json& j, const RankedList& l) {
    j = nlohmann::json{{"query", l.query}, {"docs", l.docs}};
}

void from_json(const nlohmann::json& j, RankedList& l) {
    j.at("query").get_to(l.query);
    j.at("docs").get_to(l.docs);
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"per_query_limit", c.per_query_limit},
                       {"context_size", c.context_size},
                       {"rrf_constant", c.rrf_constant},
                       {"concurrency_bound", c.concurrency_bound},
                       {"selection_mode", to_string(c.selection_mode)},
                       {"reranker_mode", to_string(c.reranker_mode)}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
    j.at("per_query_limit").get_to(c.per_query_limit);
    j.at("context_size").get_to(c.context_size);
    j.at("rrf_constant").get_to(c.rrf_constant);
    j.at("concurrency_bound").get_to(c.concurrency_bound);
    c.selection_mode = selection_mode_from_string(j.at("selection_mode").get<std::string>());
    c.reranker_mode = reranker_mode_from_string(j.at("reranker_mode").get<std::string>());
}

}  // namespace dmqr
