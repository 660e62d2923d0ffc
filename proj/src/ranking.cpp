#include "dmqr/ranking.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

namespace dmqr::rank {

namespace {

void sort_by_score_then_key(std::vector<FusedDoc>& docs) {
    std::sort(docs.begin(), docs.end(), [](const FusedDoc& a, const FusedDoc& b) {
        if (a.fused_score != b.fused_score) {
            return a.fused_score > b.fused_score;
        }
        return a.doc.key < b.doc.key;
    });
}

}  // namespace

std::vector<FusedDoc> deduplicate(const std::vector<RankedList>& lists) {
    std::vector<FusedDoc> out;
    std::unordered_map<std::string, std::size_t> by_key;

    for (const RankedList& list : lists) {
        for (std::size_t i = 0; i < list.docs.size(); ++i) {
            const Document& doc = list.docs[i];
            const Contribution occurrence{doc.retrieved_by, list.query,
                                          static_cast<int>(i) + 1};
            const auto it = by_key.find(doc.key.value);
            if (it == by_key.end()) {
                by_key.emplace(doc.key.value, out.size());
                FusedDoc fused;
                fused.doc = doc;
                fused.contributing.push_back(occurrence);
                out.push_back(std::move(fused));
            } else {
                out[it->second].contributing.push_back(occurrence);
            }
        }
    }
    return out;
}

std::vector<FusedDoc> rrf_fuse(const std::vector<RankedList>& lists, int k) {
    if (k < 1) {
        throw Error(ErrorCode::InvalidConfig, "rrf constant must be at least 1");
    }
    std::vector<FusedDoc> fused = deduplicate(lists);
    for (FusedDoc& candidate : fused) {
        // Contributions are in list order; summing in that fixed order keeps
        // the result bit-identical with any recomputation that scans the raw
        // lists the same way.
        double score = 0.0;
        for (const Contribution& c : candidate.contributing) {
            score += 1.0 / static_cast<double>(k + c.rank);
        }
        candidate.fused_score = score;
    }
    sort_by_score_then_key(fused);
    return fused;
}

std::vector<FusedDoc> lexical_rerank(const Query& query, std::vector<FusedDoc> candidates) {
    const auto query_terms = text::tokenize(query.text);

    // Tiny corpus statistics over just these candidates, mirroring the local
    // index weighting (k1=1.2, b=0.75, +1 idf).
    const double k1 = 1.2;
    const double b = 0.75;
    const double n_docs = static_cast<double>(candidates.size());

    std::vector<std::unordered_map<std::string, int>> tfs(candidates.size());
    std::vector<double> lengths(candidates.size(), 0.0);
    std::unordered_map<std::string, int> dfs;
    double total_len = 0.0;

    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto tokens =
            text::tokenize(candidates[i].doc.title + "\n" + candidates[i].doc.content);
        lengths[i] = static_cast<double>(tokens.size());
        total_len += lengths[i];
        for (const auto& token : tokens) {
            ++tfs[i][token];
        }
        for (const auto& [term, tf] : tfs[i]) {
            (void)tf;
            ++dfs[term];
        }
    }

    const double avg_len = total_len > 0.0 ? total_len / n_docs : 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double score = 0.0;
        if (avg_len > 0.0) {
            const double norm = k1 * (1.0 - b + b * lengths[i] / avg_len);
            for (const auto& term : query_terms) {
                const auto tf_it = tfs[i].find(term);
                if (tf_it == tfs[i].end()) {
                    continue;
                }
                const double tf = static_cast<double>(tf_it->second);
                const double df = static_cast<double>(dfs[term]);
                const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
                score += idf * (tf * (k1 + 1.0)) / (tf + norm);
            }
        }
        candidates[i].fused_score = score;
    }
    sort_by_score_then_key(candidates);
    return candidates;
}

namespace {

struct SplitUrl {
    std::string origin;
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const std::size_t path_begin =
        url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_begin == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace

std::vector<FusedDoc> remote_rerank(const Query& query, std::vector<FusedDoc> candidates,
                                    const RemoteRerankConfig& config) {
    if (config.url.empty()) {
        throw Error(ErrorCode::InvalidConfig, "remote reranker url is not configured");
    }
    if (candidates.empty()) {
        return candidates;
    }

    nlohmann::json passages = nlohmann::json::array();
    for (const FusedDoc& candidate : candidates) {
        passages.push_back(candidate.doc.title + "\n" + candidate.doc.content);
    }
    const std::string payload =
        nlohmann::json{{"query", query.text}, {"passages", passages}}.dump();
    const auto [origin, path] = split_url(config.url);

    std::string last_error = "transport failure";
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config.backoff_base_ms * (1 << (attempt - 1))));
        }

        httplib::Client client(origin);
        client.set_connection_timeout(config.timeout_ms / 1000,
                                      (config.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!config.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config.api_key);
        }

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "reranker transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw Error(ErrorCode::Auth,
                        "reranker returned HTTP " + std::to_string(res->status));
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "reranker returned HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(ErrorCode::ProtocolError,
                        "unexpected reranker HTTP status " + std::to_string(res->status));
        }

        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ProtocolError,
                        std::string("unparseable reranker body: ") + e.what());
        }
        if (!parsed.contains("scores") || !parsed["scores"].is_array() ||
            parsed["scores"].size() != candidates.size()) {
            throw Error(ErrorCode::ProtocolError,
                        "reranker scores do not match the passage count");
        }
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto& score = parsed["scores"][i];
            if (!score.is_number()) {
                throw Error(ErrorCode::ProtocolError, "reranker score is not a number");
            }
            candidates[i].fused_score = score.get<double>();
        }
        sort_by_score_then_key(candidates);
        return candidates;
    }

    throw Error(ErrorCode::Transport,
                last_error + " after " + std::to_string(config.max_retries) + " retries");
}

std::vector<FusedDoc> top_k(std::vector<FusedDoc> ranked, int k) {
    if (k < 1) {
        throw Error(ErrorCode::InvalidConfig, "top-k needs k >= 1");
    }
    if (static_cast<std::size_t>(k) < ranked.size()) {
        ranked.resize(static_cast<std::size_t>(k));
    }
    return ranked;
}

}  // namespace dmqr::rank
