#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmqr/model.hpp"

namespace dmqr::retrieval {

struct CorpusDoc {
    std::string id;
    std::string title;
    std::string text;
    std::optional<std::string> url;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Immutable BM25 index over a fixed corpus. Scoring uses the +1 idf
/// variant, ln(1 + (N - df + 0.5)/(df + 0.5)), which never goes negative.
/// Tokenization is the shared minimal tokenizer: lowercase, split on
/// non-alphanumeric, no stemming, no stopwords.
class Bm25Index {
public:
    static Bm25Index build(std::vector<CorpusDoc> docs, Bm25Params params = {});

    /// One CorpusDoc JSON object per line; parse errors carry 1-based line
    /// numbers. Accepts "content" as an alias for "text".
    static Bm25Index build_from_jsonl(const std::filesystem::path& path, Bm25Params params = {});

    static Bm25Index load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Sum over query terms (with multiplicity) of
    /// idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avglen)).
    /// Terms absent from the document or the corpus contribute zero.
    double score(const std::vector<std::string>& query_terms, std::size_t doc_index) const;

    /// Top documents by (score desc, doc id asc), zero scores excluded,
    /// duplicate document keys collapsed to the best-ranked survivor.
    /// Scoring of the candidate set runs parallel-for; results are
    /// independent of thread count.
    RankedList search(const std::string& query_text, int limit) const;

    /// Brute-force reference: scores every document serially, then applies
    /// the same ordering rules. Kept for tests and the benchmark.
    RankedList search_serial(const std::string& query_text, int limit) const;

    std::size_t doc_count() const { return docs_.size(); }
    double avg_doc_length() const { return avg_len_; }
    std::size_t vocab_size() const { return postings_.size(); }
    const CorpusDoc& doc(std::size_t i) const { return docs_.at(i); }
    const Bm25Params& params() const { return params_; }

    /// Content digest identifying this corpus + parameters; embedded in the
    /// local retriever id so cache keys never collide across corpora.
    const std::string& fingerprint() const { return fingerprint_; }

private:
    Bm25Index() = default;

    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    RankedList ranked_from_scores(const std::string& query_text,
                                  const std::vector<std::pair<std::size_t, double>>& scored,
                                  int limit) const;

    std::vector<CorpusDoc> docs_;
    std::vector<DocumentKey> keys_;        // precomputed per-doc dedup identity
    std::vector<std::uint32_t> lengths_;   // token counts
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avg_len_ = 0.0;
    Bm25Params params_;
    std::string fingerprint_;
};

/// Black-box search backend: query text in, ranked documents out.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual RankedList search(const std::string& query_text, int limit) = 0;

    /// Stable identity mixed into cache keys.
    virtual std::string id() const = 0;
};

class LocalRetriever : public Retriever {
public:
    explicit LocalRetriever(std::shared_ptr<const Bm25Index> index);

    /// Throws IndexMissing when `index_path` does not exist.
    static LocalRetriever open(const std::filesystem::path& index_path);

    RankedList search(const std::string& query_text, int limit) override;
    std::string id() const override;

    const Bm25Index& index() const { return *index_; }

private:
    std::shared_ptr<const Bm25Index> index_;
};

struct RemoteSearchConfig {
    std::string url;  // POST endpoint returning {"results": [...]}
    std::string api_key;
    int timeout_ms = 10000;
    int max_retries = 2;
    int backoff_base_ms = 250;
};

/// Web-search client. POSTs {"query", "limit"}; adapts result entries
/// {name|title, url, snippet|content} positionally into ranks 1..n.
class RemoteRetriever : public Retriever {
public:
    explicit RemoteRetriever(RemoteSearchConfig config);

    RankedList search(const std::string& query_text, int limit) override;
    std::string id() const override;

private:
    RemoteSearchConfig config_;
};

/// Persistent response cache, one JSON file per (retriever, query, limit)
/// key under <dir>/<first two hex chars>/<key>.json. All I/O failures
/// degrade to pass-through; the cache never fails a query.
class SearchCache {
public:
    explicit SearchCache(std::filesystem::path dir);

    static std::string key_for(const std::string& retriever_id, const std::string& query_text,
                               int limit);

    /// Hit: deserialized payload, zero retriever calls. Miss: delegate,
    /// store, return. `hit` reports which path was taken.
    RankedList cached_search(Retriever& retriever, const std::string& query_text, int limit,
                             bool* hit = nullptr);

    int hits() const { return hits_.load(); }
    int misses() const { return misses_.load(); }

    struct DiskStats {
        std::size_t entries = 0;
        std::uintmax_t bytes = 0;
    };
    DiskStats disk_stats() const;

    /// Removes every entry, returns how many were deleted.
    std::size_t clear();

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path entry_path(const std::string& key) const;

    std::filesystem::path dir_;
    std::atomic<int> hits_{0};
    std::atomic<int> misses_{0};
};

}  // namespace dmqr::retrieval
