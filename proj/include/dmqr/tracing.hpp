#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "dmqr/model.hpp"

namespace dmqr::trace {

/// Wall-clock interval of one pipeline stage, in milliseconds relative to
/// the start of the run.
struct StageTiming {
    std::string stage;
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;

    std::int64_t wall_ms() const { return end_ms - start_ms; }
};

/// How different the query-set members are from each other, and how many
/// documents each member's list contributed that no other member found.
/// Reported, never enforced.
struct DiversityStats {
    std::vector<std::string> labels;            // member strategies, original first
    std::vector<std::vector<double>> jaccard;   // symmetric, unit diagonal
    std::map<std::string, int> unique_docs;     // label -> sole-contributor count
};

/// `lists` must be aligned with the query-set members (original first, then
/// rewrites in order); members that did not retrieve get an empty list.
/// Jaccard is over lowercase token sets of the member texts; unique counts
/// come from deduplication provenance.
DiversityStats diversity_stats(const QuerySet& query_set,
                               const std::vector<RankedList>& lists);

/// Structured event stream. Implementations must tolerate concurrent emit
/// calls; the pipeline fires events from parallel sections.
class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void emit(const std::string& event, const nlohmann::json& fields) = 0;
};

/// Newline-delimited JSON on stderr, one object per event.
class StderrEventSink : public EventSink {
public:
    void emit(const std::string& event, const nlohmann::json& fields) override;

private:
    std::mutex mutex_;
};

}  // namespace dmqr::trace
