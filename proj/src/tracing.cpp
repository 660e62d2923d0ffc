#include "dmqr/tracing.hpp"

#include <nlohmann/json.hpp>

#include <iostream>
#include <unordered_set>

#include "dmqr/errors.hpp"
#include "dmqr/ranking.hpp"
#include "dmqr/text.hpp"

namespace dmqr::trace {

DiversityStats diversity_stats(const QuerySet& query_set,
                               const std::vector<RankedList>& lists) {
    const auto members = query_set_members(query_set);
    if (lists.size() != members.size()) {
        throw Error(ErrorCode::InvalidConfig,
                    "diversity_stats: got " + std::to_string(lists.size()) +
                        " lists for " + std::to_string(members.size()) +
                        " query set members");
    }

    DiversityStats stats;
    stats.labels.reserve(members.size());
    std::vector<std::unordered_set<std::string>> tokens;
    tokens.reserve(members.size());
    for (const auto& member : members) {
        stats.labels.push_back(member.strategy.name());
        tokens.push_back(text::token_set(member.text));
    }

    const std::size_t n = members.size();
    stats.jaccard.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        stats.jaccard[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double sim = text::jaccard(tokens[i], tokens[j]);
            stats.jaccard[i][j] = sim;
            stats.jaccard[j][i] = sim;
        }
    }

    for (const auto& label : stats.labels) {
        stats.unique_docs[label] = 0;
    }
    // A document counts for a strategy when every occurrence across all lists
    // carries that strategy: nobody else retrieved it.
    for (const auto& fused : rank::deduplicate(lists)) {
        const std::string& first = fused.contributing.front().strategy.name();
        bool sole = true;
        for (const auto& contribution : fused.contributing) {
            if (contribution.strategy.name() != first) {
                sole = false;
                break;
            }
        }
        if (sole) {
            ++stats.unique_docs[first];
        }
    }
    return stats;
}

void StderrEventSink::emit(const std::string& event, const nlohmann::json& fields) {
    nlohmann::json line = fields.is_object() ? fields : nlohmann::json::object();
    if (!fields.is_object() && !fields.is_null()) {
        line["data"] = fields;
    }
    line["event"] = event;
    const std::string dumped = line.dump();
    std::lock_guard<std::mutex> lock(mutex_);
    std::cerr << dumped << "\n";
}

}  // namespace dmqr::trace
