#pragma once

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace dmqr {

/// Identifier of a rewriting strategy. String-valued so the pool can host
/// registered extensions; the built-in ids get canonical ordering ranks.
/// Fusion paraphrase variants are a family: FUSION_VARIANT_1, _2, ... all
/// share the FUSION_VARIANT template registration.
class StrategyId {
public:
    StrategyId() = default;
    explicit StrategyId(std::string name);

    const std::string& name() const { return name_; }
    bool empty() const { return name_.empty(); }

    /// Provenance tag for documents retrieved by the unrewritten query.
    static StrategyId original() { return StrategyId("ORIGINAL"); }

    static StrategyId gqr() { return StrategyId("GQR"); }
    static StrategyId kwr() { return StrategyId("KWR"); }
    static StrategyId par() { return StrategyId("PAR"); }
    static StrategyId cce() { return StrategyId("CCE"); }
    static StrategyId baseline_rewrite() { return StrategyId("BASELINE_REWRITE"); }
    static StrategyId hyde() { return StrategyId("HYDE"); }
    static StrategyId fusion_variant() { return StrategyId("FUSION_VARIANT"); }
    static StrategyId fusion_variant(int index);

    bool is_fusion_variant() const;

    /// Ordering key for query-set assembly: GQR, KWR, PAR, CCE, then the
    /// baselines, then fusion variants, then registered extensions (which
    /// keep their given relative order under stable sort).
    int canonical_rank() const;

    bool operator==(const StrategyId& other) const { return name_ == other.name_; }
    bool operator!=(const StrategyId& other) const { return name_ != other.name_; }
    bool operator<(const StrategyId& other) const { return name_ < other.name_; }

private:
    std::string name_;
};

struct Query {
    std::string text;
    std::string id;
};

/// Throws EmptyQuery when text trims to empty.
void validate_query(const Query& q);

struct RewrittenQuery {
    StrategyId strategy;
    std::string text;
    Query source;
};

/// The original query plus its strategy-tagged rewrites. Always iterate the
/// original first; rewrites are held in canonical pool order.
struct QuerySet {
    Query original;
    std::vector<RewrittenQuery> rewrites;

    std::size_t size() const { return 1 + rewrites.size(); }
};

/// Validates and assembles a QuerySet: original first, rewrites stable-sorted
/// to canonical pool order, duplicate strategies rejected.
QuerySet build_query_set(Query original, std::vector<RewrittenQuery> rewrites);

/// One retrieval target inside a QuerySet: the tag ORIGINAL plus the original
/// text, or a strategy id plus its rewrite text.
struct QuerySetMember {
    StrategyId strategy;
    std::string text;
};

std::vector<QuerySetMember> query_set_members(const QuerySet& qs);

/// Deduplication identity of a document: normalized url when present,
/// otherwise a content digest. Compared lexicographically everywhere a
/// ranking operation needs a tie-break.
struct DocumentKey {
    std::string value;

    bool operator==(const DocumentKey& other) const { return value == other.value; }
    bool operator!=(const DocumentKey& other) const { return value != other.value; }
    bool operator<(const DocumentKey& other) const { return value < other.value; }
};

/// Deterministic key for (url, content). Url-bearing documents are keyed by
/// the normalized url (scheme+host lowercased, fragment and trailing slash
/// stripped); url-less documents by the SHA-256 of the whitespace-normalized
/// content. Throws EmptyDocument when both inputs are empty.
DocumentKey document_key(const std::optional<std::string>& url, const std::string& content);

std::string normalize_url(std::string_view url);

struct Document {
    DocumentKey key;
    std::string title;
    std::string content;
    std::optional<std::string> url;
    StrategyId retrieved_by = StrategyId::original();
    int retrieval_rank = 1;
};

struct RankedList {
    std::string query;
    std::vector<Document> docs;
};

/// Throws when ranks are not 1..len or a key repeats within the list.
void validate_ranked_list(const RankedList& list);

enum class SelectionMode { FixedAll, Adaptive };
enum class RerankerMode { Rrf, Lexical, Remote };

const char* to_string(SelectionMode m);
const char* to_string(RerankerMode m);
SelectionMode selection_mode_from_string(const std::string& s);
RerankerMode reranker_mode_from_string(const std::string& s);

struct PipelineConfig {
    int per_query_limit = 10;   // M: documents retrieved per query-set member
    int context_size = 5;       // K: documents handed to the answer model
    int rrf_constant = 60;
    int concurrency_bound = 4;
    SelectionMode selection_mode = SelectionMode::FixedAll;
    RerankerMode reranker_mode = RerankerMode::Rrf;
};

/// Throws InvalidConfig unless every integer field is >= 1.
void validate_config(const PipelineConfig& cfg);

// Canonical JSON representation (lower_snake_case fields) for traces,
// caches and reports.
void to_json(nlohmann::json& j, const StrategyId& s);
void from_json(const nlohmann::json& j, StrategyId& s);
void to_json(nlohmann::json& j, const Query& q);
void from_json(const nlohmann::json& j, Query& q);
void to_json(nlohmann::json& j, const RewrittenQuery& r);
void from_json(const nlohmann::json& j, RewrittenQuery& r);
void to_json(nlohmann::json& j, const QuerySet& qs);
void from_json(const nlohmann::json& j, QuerySet& qs);
void to_json(nlohmann::json& j, const DocumentKey& k);
void from_json(const nlohmann::json& j, DocumentKey& k);
void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);
void to_json(nlohmann::json& j, const RankedList& l);
void from_json(const nlohmann::json& j, RankedList& l);
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

}  // namespace dmqr
