#include <doctest.h>

#include <nlohmann/json.hpp>

#include <random>
#include <set>
#include <string>
#include <vector>

#include "dmqr/errors.hpp"
#include "dmqr/tracing.hpp"

using namespace dmqr;
using namespace dmqr::trace;

namespace {

Document quick_doc(const std::string& name, const StrategyId& strategy, int rank) {
    Document d;
    d.key = DocumentKey{"key:" + name};
    d.title = name;
    d.content = name;
    d.retrieved_by = strategy;
    d.retrieval_rank = rank;
    return d;
}

RankedList quick_list(const StrategyId& strategy, const std::vector<std::string>& names) {
    RankedList list;
    for (std::size_t i = 0; i < names.size(); ++i) {
        list.docs.push_back(quick_doc(names[i], strategy, static_cast<int>(i) + 1));
    }
    return list;
}

QuerySet two_member_set() {
    return build_query_set(Query{"alpha beta", "q1"},
                           {RewrittenQuery{StrategyId::gqr(), "beta gamma", {}}});
}

}  // namespace

TEST_CASE("stage timing reports its width") {
    StageTiming timing{"retrieval", 10, 35};
    CHECK(timing.wall_ms() == 25);
}

TEST_CASE("diversity stats: labels, jaccard matrix and unique counts") {
    const QuerySet qs = two_member_set();
    const std::vector<RankedList> lists = {
        quick_list(StrategyId::original(), {"A", "B"}),
        quick_list(StrategyId::gqr(), {"B", "C"}),
    };

    const DiversityStats stats = diversity_stats(qs, lists);
    REQUIRE(stats.labels.size() == 2);
    CHECK(stats.labels[0] == "ORIGINAL");
    CHECK(stats.labels[1] == "GQR");

    // "alpha beta" vs "beta gamma": one shared token of three distinct.
    REQUIRE(stats.jaccard.size() == 2);
    CHECK(stats.jaccard[0][0] == 1.0);
    CHECK(stats.jaccard[1][1] == 1.0);
    CHECK(stats.jaccard[0][1] == doctest::Approx(1.0 / 3.0));
    CHECK(stats.jaccard[0][1] == stats.jaccard[1][0]);

    // A is original-only, C is GQR-only, B is shared and counts for nobody.
    CHECK(stats.unique_docs.at("ORIGINAL") == 1);
    CHECK(stats.unique_docs.at("GQR") == 1);
}

TEST_CASE("diversity stats on identical texts and lists") {
    const QuerySet qs = build_query_set(
        Query{"same words", "q1"}, {RewrittenQuery{StrategyId::kwr(), "same words", {}}});
    const std::vector<RankedList> lists = {
        quick_list(StrategyId::original(), {"A"}),
        quick_list(StrategyId::kwr(), {"A"}),
    };
    const DiversityStats stats = diversity_stats(qs, lists);
    CHECK(stats.jaccard[0][1] == 1.0);
    CHECK(stats.unique_docs.at("ORIGINAL") == 0);
    CHECK(stats.unique_docs.at("KWR") == 0);
}

TEST_CASE("diversity stats tolerate empty per-member lists") {
    const QuerySet qs = two_member_set();
    const std::vector<RankedList> lists = {RankedList{}, quick_list(StrategyId::gqr(), {"X"})};
    const DiversityStats stats = diversity_stats(qs, lists);
    CHECK(stats.unique_docs.at("ORIGINAL") == 0);
    CHECK(stats.unique_docs.at("GQR") == 1);
}

TEST_CASE("diversity stats reject misaligned lists") {
    const QuerySet qs = two_member_set();
    try {
        diversity_stats(qs, {RankedList{}});
        FAIL("expected a throw");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::InvalidConfig);
    }
}

TEST_CASE("unique counts never exceed the dedup survivor count") {
    std::mt19937 rng(77);
    for (int round = 0; round < 30; ++round) {
        const std::vector<StrategyId> strategies = {StrategyId::original(), StrategyId::gqr(),
                                                    StrategyId::kwr(), StrategyId::par()};
        QuerySet qs = build_query_set(Query{"text zero", "q"},
                                      {RewrittenQuery{StrategyId::gqr(), "text one", {}},
                                       RewrittenQuery{StrategyId::kwr(), "text two", {}},
                                       RewrittenQuery{StrategyId::par(), "text three", {}}});

        std::vector<RankedList> lists(4);
        std::set<std::string> universe;
        for (std::size_t m = 0; m < 4; ++m) {
            const int n = static_cast<int>(rng() % 5);
            std::set<std::string> used;
            for (int d = 0; d < n; ++d) {
                const std::string name = "doc" + std::to_string(rng() % 8);
                if (!used.insert(name).second) {
                    continue;
                }
                lists[m].docs.push_back(quick_doc(name, strategies[m],
                                                  static_cast<int>(lists[m].docs.size()) + 1));
                universe.insert(name);
            }
        }

        const DiversityStats stats = diversity_stats(qs, lists);
        int total_unique = 0;
        for (const auto& [label, count] : stats.unique_docs) {
            total_unique += count;
        }
        CHECK(total_unique <= static_cast<int>(universe.size()));

        // Removing one member's list can only help the others: every doc it
        // co-retrieved now has one fewer contributor.
        for (std::size_t removed = 0; removed < 4; ++removed) {
            std::vector<RankedList> reduced = lists;
            reduced[removed].docs.clear();
            const DiversityStats after = diversity_stats(qs, reduced);
            for (std::size_t m = 0; m < 4; ++m) {
                if (m == removed) {
                    continue;
                }
                const std::string& label = stats.labels[m];
                CHECK(after.unique_docs.at(label) >= stats.unique_docs.at(label));
            }
        }
    }
}

TEST_CASE("stderr sink is callable with object and scalar payloads") {
    StderrEventSink sink;
    sink.emit("test_event", nlohmann::json{{"k", 1}});
    sink.emit("test_scalar", nlohmann::json("just text"));
}
