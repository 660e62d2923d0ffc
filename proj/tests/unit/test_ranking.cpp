#include <doctest.h>

#include <nlohmann/json.hpp>
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>

#include "dmqr/errors.hpp"
#include "dmqr/ranking.hpp"

using namespace dmqr;
using namespace dmqr::rank;

namespace {

Document make_doc(const std::string& name, const StrategyId& strategy, int rank) {
    Document d;
    d.key = DocumentKey{"key:" + name};
    d.title = name;
    d.content = "content of " + name;
    d.retrieved_by = strategy;
    d.retrieval_rank = rank;
    return d;
}

RankedList make_list(const StrategyId& strategy, const std::string& query,
                     const std::vector<std::string>& names) {
    RankedList list;
    list.query = query;
    for (std::size_t i = 0; i < names.size(); ++i) {
        list.docs.push_back(make_doc(names[i], strategy, static_cast<int>(i) + 1));
    }
    return list;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& err) {
        return err.code();
    }
    FAIL("expected a throw");
    return ErrorCode::IoError;
}

class FakeRerankServer {
public:
    explicit FakeRerankServer(httplib::Server::Handler handler) {
        server_.Post("/rerank", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeRerankServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/rerank"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace

TEST_CASE("deduplicate keeps the first occurrence and all provenance") {
    const RankedList l1 = make_list(StrategyId::original(), "q", {"A", "B"});
    const RankedList l2 = make_list(StrategyId::gqr(), "q rewritten", {"B", "C"});

    const std::vector<FusedDoc> fused = deduplicate({l1, l2});
    REQUIRE(fused.size() == 3);
    CHECK(fused[0].doc.key.value == "key:A");
    CHECK(fused[1].doc.key.value == "key:B");
    CHECK(fused[2].doc.key.value == "key:C");

    // B came from both lists; the survivor is the first occurrence but both
    // contributions are recorded in list order.
    CHECK(fused[1].doc.retrieved_by == StrategyId::original());
    REQUIRE(fused[1].contributing.size() == 2);
    CHECK(fused[1].contributing[0].strategy == StrategyId::original());
    CHECK(fused[1].contributing[0].query == "q");
    CHECK(fused[1].contributing[0].rank == 2);
    CHECK(fused[1].contributing[1].strategy == StrategyId::gqr());
    CHECK(fused[1].contributing[1].query == "q rewritten");
    CHECK(fused[1].contributing[1].rank == 1);

    CHECK(fused[0].contributing.size() == 1);
    CHECK(fused[0].fused_score == 0.0);
}

TEST_CASE("deduplicate of disjoint lists changes nothing") {
    const RankedList l1 = make_list(StrategyId::original(), "q", {"A", "B"});
    const RankedList l2 = make_list(StrategyId::kwr(), "k", {"C"});
    const std::vector<FusedDoc> fused = deduplicate({l1, l2});
    REQUIRE(fused.size() == 3);
    for (const FusedDoc& doc : fused) {
        CHECK(doc.contributing.size() == 1);
    }
}

TEST_CASE("deduplicate handles empty input") {
    CHECK(deduplicate({}).empty());
    CHECK(deduplicate({RankedList{}, RankedList{}}).empty());
}

TEST_CASE("rrf fusion reproduces the worked two-list example exactly") {
    const RankedList l1 = make_list(StrategyId::original(), "q", {"A", "B", "C"});
    const RankedList l2 = make_list(StrategyId::gqr(), "g", {"A", "C"});

    const std::vector<FusedDoc> fused = rrf_fuse({l1, l2}, 60);
    REQUIRE(fused.size() == 3);
    CHECK(fused[0].doc.key.value == "key:A");
    CHECK(fused[1].doc.key.value == "key:C");
    CHECK(fused[2].doc.key.value == "key:B");

    // Contributions accumulate in list order, so the sums are reproducible
    // bit for bit.
    CHECK(fused[0].fused_score == 1.0 / 61.0 + 1.0 / 61.0);
    CHECK(fused[1].fused_score == 1.0 / 63.0 + 1.0 / 62.0);
    CHECK(fused[2].fused_score == 1.0 / 62.0);
}

TEST_CASE("rrf breaks exact score ties by ascending document key") {
    // Two singleton lists at rank 1 each: identical scores.
    const RankedList l1 = make_list(StrategyId::original(), "q", {"zebra"});
    const RankedList l2 = make_list(StrategyId::gqr(), "g", {"aardvark"});
    const std::vector<FusedDoc> fused = rrf_fuse({l1, l2}, 60);
    REQUIRE(fused.size() == 2);
    CHECK(fused[0].doc.key.value == "key:aardvark");
    CHECK(fused[1].doc.key.value == "key:zebra");
}

TEST_CASE("rrf ranking order does not depend on list order") {
    const RankedList l1 = make_list(StrategyId::original(), "q", {"A", "B", "C"});
    const RankedList l2 = make_list(StrategyId::gqr(), "g", {"C", "A"});
    const RankedList l3 = make_list(StrategyId::par(), "p", {"B", "D"});

    const std::vector<FusedDoc> forward = rrf_fuse({l1, l2, l3}, 60);
    const std::vector<FusedDoc> backward = rrf_fuse({l3, l2, l1}, 60);
    REQUIRE(forward.size() == backward.size());
    for (std::size_t i = 0; i < forward.size(); ++i) {
        CHECK(forward[i].doc.key.value == backward[i].doc.key.value);
        CHECK(forward[i].fused_score == doctest::Approx(backward[i].fused_score));
    }
}

TEST_CASE("rrf validates its constant") {
    CHECK(code_of([] { rrf_fuse({}, 0); }) == ErrorCode::InvalidConfig);
    CHECK(rrf_fuse({}, 60).empty());
}

TEST_CASE("lexical rerank orders by query overlap, zero overlap last") {
    RankedList list;
    list.query = "q";
    Document d1 = make_doc("m", StrategyId::original(), 1);
    d1.content = "the eiffel tower is in paris";
    Document d2 = make_doc("z", StrategyId::original(), 2);
    d2.content = "completely unrelated text";
    Document d3 = make_doc("a", StrategyId::original(), 3);
    d3.content = "paris paris paris france";
    list.docs = {d1, d2, d3};

    const std::vector<FusedDoc> fused =
        lexical_rerank(Query{"paris", "q1"}, deduplicate({list}));
    REQUIRE(fused.size() == 3);
    // d3 repeats the query term; d1 mentions it once; d2 never does.
    CHECK(fused[0].doc.key.value == "key:a");
    CHECK(fused[1].doc.key.value == "key:m");
    CHECK(fused[2].doc.key.value == "key:z");
    CHECK(fused[0].fused_score > fused[1].fused_score);
    CHECK(fused[2].fused_score == 0.0);
}

TEST_CASE("lexical rerank with no token overlap falls back to key order") {
    RankedList list = make_list(StrategyId::original(), "q", {"zz", "aa", "mm"});
    const std::vector<FusedDoc> fused =
        lexical_rerank(Query{"quantum chromodynamics", "q1"}, deduplicate({list}));
    REQUIRE(fused.size() == 3);
    CHECK(fused[0].doc.key.value == "key:aa");
    CHECK(fused[1].doc.key.value == "key:mm");
    CHECK(fused[2].doc.key.value == "key:zz");
    for (const FusedDoc& doc : fused) {
        CHECK(doc.fused_score == 0.0);
    }
}

TEST_CASE("lexical rerank of nothing is nothing") {
    CHECK(lexical_rerank(Query{"q", "1"}, {}).empty());
}

TEST_CASE("remote rerank reorders by provider scores") {
    std::string seen_body;
    FakeRerankServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        res.set_content(R"({"scores":[0.1, 0.9]})", "application/json");
    });

    RemoteRerankConfig config;
    config.url = server.url();
    config.api_key = "rr-key";
    config.backoff_base_ms = 1;

    const RankedList list = make_list(StrategyId::original(), "q", {"first", "second"});
    const std::vector<FusedDoc> fused =
        remote_rerank(Query{"which doc", "q1"}, deduplicate({list}), config);
    REQUIRE(fused.size() == 2);
    CHECK(fused[0].doc.key.value == "key:second");
    CHECK(fused[0].fused_score == 0.9);
    CHECK(fused[1].doc.key.value == "key:first");

    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body.at("query") == "which doc");
    REQUIRE(body.at("passages").size() == 2);
    CHECK(body.at("passages")[0] == "first\ncontent of first");
}

TEST_CASE("remote rerank enforces the score protocol") {
    const RankedList list = make_list(StrategyId::original(), "q", {"a", "b"});

    SUBCASE("score count mismatch") {
        FakeRerankServer server([](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"scores":[0.5]})", "application/json");
        });
        RemoteRerankConfig config;
        config.url = server.url();
        config.backoff_base_ms = 1;
        CHECK(code_of([&] {
                  remote_rerank(Query{"q", "1"}, deduplicate({list}), config);
              }) == ErrorCode::ProtocolError);
    }

    SUBCASE("non-numeric score") {
        FakeRerankServer server([](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"scores":[0.5, "high"]})", "application/json");
        });
        RemoteRerankConfig config;
        config.url = server.url();
        config.backoff_base_ms = 1;
        CHECK(code_of([&] {
                  remote_rerank(Query{"q", "1"}, deduplicate({list}), config);
              }) == ErrorCode::ProtocolError);
    }

    SUBCASE("auth failure") {
        FakeRerankServer server([](const httplib::Request&, httplib::Response& res) {
            res.status = 403;
        });
        RemoteRerankConfig config;
        config.url = server.url();
        config.backoff_base_ms = 1;
        CHECK(code_of([&] {
                  remote_rerank(Query{"q", "1"}, deduplicate({list}), config);
              }) == ErrorCode::Auth);
    }

    SUBCASE("retry on 500 then success") {
        std::atomic<int> hits{0};
        FakeRerankServer server([&](const httplib::Request&, httplib::Response& res) {
            if (hits.fetch_add(1) == 0) {
                res.status = 500;
                return;
            }
            res.set_content(R"({"scores":[1.0, 2.0]})", "application/json");
        });
        RemoteRerankConfig config;
        config.url = server.url();
        config.backoff_base_ms = 1;
        const auto fused = remote_rerank(Query{"q", "1"}, deduplicate({list}), config);
        CHECK(hits.load() == 2);
        CHECK(fused[0].fused_score == 2.0);
    }

    SUBCASE("missing url") {
        CHECK(code_of([&] {
                  remote_rerank(Query{"q", "1"}, deduplicate({list}), RemoteRerankConfig{});
              }) == ErrorCode::InvalidConfig);
    }

    SUBCASE("no candidates, no call") {
        RemoteRerankConfig config;
        config.url = "http://127.0.0.1:1/rerank";  // nothing listens here
        CHECK(remote_rerank(Query{"q", "1"}, {}, config).empty());
    }
}

TEST_CASE("top_k takes a prefix and validates k") {
    const RankedList list = make_list(StrategyId::original(), "q", {"a", "b", "c"});
    const std::vector<FusedDoc> fused = rrf_fuse({list}, 60);
    CHECK(top_k(fused, 2).size() == 2);
    CHECK(top_k(fused, 2)[0].doc.key.value == fused[0].doc.key.value);
    CHECK(top_k(fused, 10).size() == 3);
    CHECK(code_of([&] { top_k(fused, 0); }) == ErrorCode::InvalidConfig);
}
