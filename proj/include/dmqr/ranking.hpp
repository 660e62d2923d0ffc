#pragma once

#include <string>
#include <vector>

#include "dmqr/model.hpp"

namespace dmqr::rank {

/// One occurrence of a document in a retrieval list: which strategy's list,
/// the query text that list was retrieved with, and the 1-based rank.
struct Contribution {
    StrategyId strategy;
    std::string query;
    int rank = 0;
};

struct FusedDoc {
    Document doc;
    double fused_score = 0.0;
    std::vector<Contribution> contributing;  // list order, never empty
};

/// Collapses the lists to unique document keys. First occurrence wins
/// (earliest list, then lowest rank) and the survivors keep first-occurrence
/// order; every occurrence is recorded on the survivor. fused_score is left
/// at zero for the fusion step.
std::vector<FusedDoc> deduplicate(const std::vector<RankedList>& lists);

inline constexpr int kDefaultRrfConstant = 60;

/// Reciprocal rank fusion: score(d) = sum over occurrences of 1/(k + rank),
/// accumulated in list order. Sorted by score descending, ties by document
/// key ascending.
std::vector<FusedDoc> rrf_fuse(const std::vector<RankedList>& lists,
                               int k = kDefaultRrfConstant);

/// Rescoring of deduplicated candidates by lexical overlap with the original
/// query: an ephemeral term-frequency model over the candidates' title+content
/// text, same weighting as the local index. Docs sharing no token with the
/// query score zero and sort last. Ties by key ascending.
std::vector<FusedDoc> lexical_rerank(const Query& query, std::vector<FusedDoc> candidates);

struct RemoteRerankConfig {
    std::string url;  // POST {query, passages:[...]} -> {scores:[...]}
    std::string api_key;
    int timeout_ms = 10000;
    int max_retries = 1;
    int backoff_base_ms = 250;
};

/// Cross-encoder service client. Throws on transport/auth/protocol failure;
/// the pipeline catches and falls back to rrf_fuse, it never aborts a query
/// over the reranker.
std::vector<FusedDoc> remote_rerank(const Query& query, std::vector<FusedDoc> candidates,
                                    const RemoteRerankConfig& config);

/// First min(K, size) entries, order preserved.
std::vector<FusedDoc> top_k(std::vector<FusedDoc> ranked, int k);

}  // namespace dmqr::rank
