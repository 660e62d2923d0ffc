#include <doctest.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dmqr/errors.hpp"
#include "dmqr/pipeline.hpp"

using namespace dmqr;
using namespace dmqr::pipeline;

namespace {

/// Five documents, each reachable through exactly one scripted rewrite.
struct Fixture {
    llm::TemplateRegistry templates = llm::TemplateRegistry::builtin();
    rewrite::StrategyPool pool = rewrite::StrategyPool::dmqr_default(templates);
    std::shared_ptr<const retrieval::Bm25Index> index;
    std::unique_ptr<retrieval::LocalRetriever> retriever;
    llm::ScriptedCompleter completer;

    Fixture() {
        index = std::make_shared<const retrieval::Bm25Index>(retrieval::Bm25Index::build({
            {"doc_orig", "Original Doc", "alpha anchor", std::nullopt},
            {"doc_gqr", "Refined Doc", "beta anchor", std::nullopt},
            {"doc_kwr", "Keyword Doc", "gamma anchor", std::nullopt},
            {"doc_par", "Pseudo Doc", "delta anchor", std::nullopt},
            {"doc_cce", "Core Doc", "epsilon anchor", std::nullopt},
        }));
        retriever = std::make_unique<retrieval::LocalRetriever>(index);
        completer.add_pattern("Refined query:", "beta");
        completer.add_pattern("Keywords:", "gamma");
        completer.add_pattern("Pseudo-answer:", "delta");
        completer.add_pattern("Core content:", "epsilon");
        completer.add_pattern("Rewritten query:", "beta");
        completer.add_pattern("Passage:", "delta");
        completer.add_pattern("numbered context documents", "generated answer");
    }

    Deps deps() {
        Deps d;
        d.completer = &completer;
        d.retriever = retriever.get();
        d.pool = &pool;
        d.templates = &templates;
        return d;
    }

    Options options(Method method) {
        Options o;
        o.method = method;
        return o;
    }

    Query query() const { return Query{"alpha", "q1"}; }
};

class FailingRetriever : public retrieval::Retriever {
public:
    FailingRetriever(retrieval::Retriever& inner, std::string poisoned)
        : inner_(&inner), poisoned_(std::move(poisoned)) {}

    RankedList search(const std::string& query_text, int limit) override {
        if (query_text == poisoned_) {
            throw Error(ErrorCode::Transport, "injected search outage");
        }
        return inner_->search(query_text, limit);
    }
    std::string id() const override { return inner_->id(); }

private:
    retrieval::Retriever* inner_;
    std::string poisoned_;
};

class SlowRetriever : public retrieval::Retriever {
public:
    explicit SlowRetriever(retrieval::Retriever& inner) : inner_(&inner) {}

    RankedList search(const std::string& query_text, int limit) override {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        return inner_->search(query_text, limit);
    }
    std::string id() const override { return inner_->id(); }

private:
    retrieval::Retriever* inner_;
};

class CollectingSink : public trace::EventSink {
public:
    void emit(const std::string& event, const nlohmann::json&) override {
        std::lock_guard<std::mutex> lock(mutex_);
        events.push_back(event);
    }

    int count(const std::string& event) const {
        int n = 0;
        for (const std::string& e : events) {
            if (e == event) {
                ++n;
            }
        }
        return n;
    }

    std::vector<std::string> events;

private:
    std::mutex mutex_;
};

/// Scrubs every timing-dependent field so two traces can be compared.
nlohmann::json strip_volatile(nlohmann::json j) {
    if (j.is_object()) {
        for (const char* key : {"timings", "wall_ms", "latency_ms", "start_ms", "end_ms"}) {
            j.erase(key);
        }
        for (auto& [key, value] : j.items()) {
            value = strip_volatile(value);
        }
    } else if (j.is_array()) {
        for (auto& value : j) {
            value = strip_volatile(value);
        }
    }
    return j;
}

}  // namespace

TEST_CASE("fixed-all run fans out once per query-set member") {
    Fixture fx;
    const PipelineTrace trace = run(fx.query(), fx.options(Method::Dmqr), fx.deps());

    REQUIRE(trace.query_set.rewrites.size() == 4);
    REQUIRE(trace.retrievals.size() == 5);
    CHECK(trace.retrievals[0].strategy == StrategyId::original());
    CHECK(trace.retrievals[1].strategy == StrategyId::gqr());
    CHECK(trace.retrievals[2].strategy == StrategyId::kwr());
    CHECK(trace.retrievals[3].strategy == StrategyId::par());
    CHECK(trace.retrievals[4].strategy == StrategyId::cce());
    CHECK(trace.retrievals[2].query_text == "gamma");

    CHECK(trace.candidates_before_dedup == 5);
    CHECK(trace.dedup_survivors == 5);
    CHECK(trace.fused.size() == 5);
    CHECK(trace.context.size() == 5);
    CHECK(trace.answer.text == "generated answer");
    REQUIRE(trace.answer.context_keys.size() == 5);
    for (std::size_t i = 0; i < trace.context.size(); ++i) {
        CHECK(trace.answer.context_keys[i].value == trace.context[i].doc.key.value);
    }

    // Four rewrites plus one answer; no selection call in fixed mode.
    CHECK(fx.completer.calls() == 5);
    CHECK_FALSE(trace.selection.has_value());

    // Disjoint lists: every member found a document nobody else did.
    REQUIRE(trace.diversity.labels.size() == 5);
    CHECK(trace.diversity.labels[0] == "ORIGINAL");
    for (const auto& [label, count] : trace.diversity.unique_docs) {
        CHECK(count == 1);
    }

    bool saw_total = false;
    for (const auto& timing : trace.timings) {
        CHECK(timing.end_ms >= timing.start_ms);
        saw_total = saw_total || timing.stage == "total";
    }
    CHECK(saw_total);
}

TEST_CASE("documents carry the strategy whose list retrieved them") {
    Fixture fx;
    const PipelineTrace trace = run(fx.query(), fx.options(Method::Dmqr), fx.deps());
    for (const RetrievalRecord& record : trace.retrievals) {
        for (const Document& doc : record.list.docs) {
            CHECK(doc.retrieved_by == record.strategy);
        }
    }
}

TEST_CASE("adaptive selection narrows the fan-out") {
    Fixture fx;
    fx.completer.add_pattern("Chosen strategies:", "GQR, PAR");
    const PipelineTrace trace = run(fx.query(), fx.options(Method::DmqrAdaptive), fx.deps());

    REQUIRE(trace.selection.has_value());
    REQUIRE(trace.selection->chosen.size() == 2);
    CHECK(trace.selection->chosen[0] == StrategyId::gqr());
    CHECK(trace.selection->chosen[1] == StrategyId::par());
    CHECK_FALSE(trace.selection_failed);

    REQUIRE(trace.retrievals.size() == 3);
    CHECK(trace.retrievals[0].strategy == StrategyId::original());
    CHECK(trace.retrievals[1].strategy == StrategyId::gqr());
    CHECK(trace.retrievals[2].strategy == StrategyId::par());

    // One selection call, two rewrites, one answer.
    CHECK(fx.completer.calls() == 4);
}

TEST_CASE("unparseable selection output falls back to the whole pool") {
    Fixture fx;
    fx.completer.add_pattern("Chosen strategies:", "no idea, sorry");
    const PipelineTrace trace = run(fx.query(), fx.options(Method::DmqrAdaptive), fx.deps());
    REQUIRE(trace.selection.has_value());
    CHECK(trace.selection->fallback_used);
    CHECK(trace.selection->chosen.size() == 4);
    CHECK_FALSE(trace.selection_failed);
    CHECK(trace.retrievals.size() == 5);
}

TEST_CASE("selection call failure degrades to the whole pool") {
    // The completer covers every rewrite prompt and the answer prompt but
    // nothing in the selection prompt, so the selector call itself errors.
    Fixture fx;
    llm::ScriptedCompleter completer;
    completer.add_pattern("Refined query:", "beta");
    completer.add_pattern("Keywords:", "gamma");
    completer.add_pattern("Question: alpha\nPseudo-answer:", "delta");
    completer.add_pattern("Core content:", "epsilon");
    completer.add_pattern("numbered context documents", "generated answer");
    Deps deps = fx.deps();
    deps.completer = &completer;

    const PipelineTrace trace = run(fx.query(), fx.options(Method::DmqrAdaptive), deps);
    CHECK(trace.selection_failed);
    CHECK_FALSE(trace.selection.has_value());
    CHECK_FALSE(trace.selection_error.empty());
    CHECK(trace.retrievals.size() == 5);
    CHECK(trace.answer.text == "generated answer");
}

TEST_CASE("oqr runs match dmqr with an empty pool") {
    Fixture fx;
    const PipelineTrace oqr = run(fx.query(), fx.options(Method::Oqr), fx.deps());

    rewrite::StrategyPool empty_pool;
    Deps deps = fx.deps();
    deps.pool = &empty_pool;
    const PipelineTrace degenerate = run(fx.query(), fx.options(Method::Dmqr), deps);

    const nlohmann::json a = strip_volatile(trace_to_json(oqr));
    const nlohmann::json b = strip_volatile(trace_to_json(degenerate));
    CHECK(a.at("query_set") == b.at("query_set"));
    CHECK(a.at("retrievals") == b.at("retrievals"));
    CHECK(a.at("fused") == b.at("fused"));
    CHECK(a.at("context") == b.at("context"));
    CHECK(a.at("answer") == b.at("answer"));

    CHECK(oqr.retrievals.size() == 1);
    CHECK(oqr.rewrites.empty());
    CHECK(oqr.retrievals[0].strategy == StrategyId::original());
}

TEST_CASE("single-rewrite baselines retrieve with the rewrite alone") {
    Fixture fx;
    const PipelineTrace trace = run(fx.query(), fx.options(Method::Rewrite), fx.deps());

    // The query set documents both members, the plan uses only the rewrite.
    CHECK(trace.query_set.size() == 2);
    REQUIRE(trace.retrievals.size() == 1);
    CHECK(trace.retrievals[0].strategy == StrategyId::baseline_rewrite());
    CHECK(trace.retrievals[0].query_text == "beta");
    REQUIRE(trace.context.size() == 1);
    CHECK(trace.context[0].doc.title == "Refined Doc");

    const PipelineTrace hyde = run(fx.query(), fx.options(Method::Hyde), fx.deps());
    REQUIRE(hyde.retrievals.size() == 1);
    CHECK(hyde.retrievals[0].strategy == StrategyId::hyde());
    CHECK(hyde.retrievals[0].query_text == "delta");
    REQUIRE(hyde.context.size() == 1);
    CHECK(hyde.context[0].doc.title == "Pseudo Doc");
}

TEST_CASE("rag fusion fans out the original plus its variants") {
    Fixture fx;
    fx.completer.add_pattern("Variants:", "1. beta\n2. gamma\n3. delta");
    Options options = fx.options(Method::RagFusion);
    options.fusion_count = 3;
    const PipelineTrace trace = run(fx.query(), options, fx.deps());

    CHECK(trace.fusion_shortfall == 0);
    REQUIRE(trace.retrievals.size() == 4);
    CHECK(trace.retrievals[0].strategy == StrategyId::original());
    CHECK(trace.retrievals[1].strategy == StrategyId::fusion_variant(1));
    CHECK(trace.retrievals[3].strategy == StrategyId::fusion_variant(3));
    CHECK(trace.candidates_before_dedup == 4);
    CHECK(trace.rewrites.size() == 3);
}

TEST_CASE("rag fusion shortfall is recorded") {
    Fixture fx;
    fx.completer.add_pattern("Variants:", "1. beta\n2.\n3.");
    Options options = fx.options(Method::RagFusion);
    options.fusion_count = 3;
    const PipelineTrace trace = run(fx.query(), options, fx.deps());
    CHECK(trace.fusion_shortfall == 2);
    CHECK(trace.retrievals.size() == 2);  // original + the variant that parsed
}

TEST_CASE("unusable rewrite falls back to the original query text") {
    Fixture fx;
    fx.completer.add_pattern("Refined query:", "");  // parses to nothing
    const PipelineTrace trace = run(fx.query(), fx.options(Method::Dmqr), fx.deps());

    REQUIRE(trace.rewrites.size() == 4);
    CHECK(trace.rewrites[0].strategy == StrategyId::gqr());
    CHECK(trace.rewrites[0].fallback);
    CHECK(trace.rewrites[0].text == "alpha");
    CHECK_FALSE(trace.rewrites[0].note.empty());
    CHECK_FALSE(trace.rewrites[1].fallback);

    // GQR now retrieves with "alpha", landing on the original's document, so
    // dedup collapses one candidate.
    CHECK(trace.retrievals.size() == 5);
    CHECK(trace.candidates_before_dedup == 5);
    CHECK(trace.dedup_survivors == 4);
}

TEST_CASE("one failing retrieval degrades to an empty list") {
    Fixture fx;
    FailingRetriever flaky(*fx.retriever, "gamma");
    Deps deps = fx.deps();
    deps.retriever = &flaky;

    const PipelineTrace trace = run(fx.query(), fx.options(Method::Dmqr), deps);
    REQUIRE(trace.retrievals.size() == 5);
    CHECK(trace.retrievals[2].failed);
    CHECK(trace.retrievals[2].list.docs.empty());
    CHECK(trace.retrievals[2].error.find("injected search outage") != std::string::npos);
    CHECK_FALSE(trace.retrievals[1].failed);
    CHECK(trace.candidates_before_dedup == 4);
    CHECK(trace.answer.text == "generated answer");
}

TEST_CASE("remote reranker failure falls back to rrf") {
    Fixture fx;
    rank::RemoteRerankConfig reranker;
    reranker.url = "http://127.0.0.1:1/rerank";  // nothing listens here
    reranker.timeout_ms = 200;
    reranker.max_retries = 0;

    Options options = fx.options(Method::Dmqr);
    options.config.reranker_mode = RerankerMode::Remote;
    Deps deps = fx.deps();
    deps.reranker = &reranker;
    const PipelineTrace degraded = run(fx.query(), options, deps);

    CHECK(degraded.reranker_fallback);
    CHECK_FALSE(degraded.reranker_error.empty());

    const PipelineTrace rrf = run(fx.query(), fx.options(Method::Dmqr), fx.deps());
    REQUIRE(degraded.fused.size() == rrf.fused.size());
    for (std::size_t i = 0; i < rrf.fused.size(); ++i) {
        CHECK(degraded.fused[i].doc.key.value == rrf.fused[i].doc.key.value);
        CHECK(degraded.fused[i].fused_score == rrf.fused[i].fused_score);
    }
}

TEST_CASE("answer-stage completer failures abort the run") {
    Fixture fx;
    llm::ScriptedCompleter no_answer;
    no_answer.add_pattern("Refined query:", "beta");
    no_answer.add_pattern("Keywords:", "gamma");
    no_answer.add_pattern("Pseudo-answer:", "delta");
    no_answer.add_pattern("Core content:", "epsilon");
    Deps deps = fx.deps();
    deps.completer = &no_answer;

    try {
        run(fx.query(), fx.options(Method::Dmqr), deps);
        FAIL("expected a throw");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::EmptyCompletion);
    }
}

TEST_CASE("concurrency bound does not change the trace") {
    Fixture fx1;
    Options narrow = fx1.options(Method::Dmqr);
    narrow.config.concurrency_bound = 1;
    const PipelineTrace serial = run(fx1.query(), narrow, fx1.deps());

    Fixture fx2;
    Options wide = fx2.options(Method::Dmqr);
    wide.config.concurrency_bound = 8;
    const PipelineTrace parallel = run(fx2.query(), wide, fx2.deps());

    nlohmann::json a = strip_volatile(trace_to_json(serial));
    nlohmann::json b = strip_volatile(trace_to_json(parallel));
    a.at("config").erase("concurrency_bound");
    b.at("config").erase("concurrency_bound");
    CHECK(a == b);
}

TEST_CASE("retrieval budget skips remaining calls gracefully") {
    Fixture fx;
    SlowRetriever slow(*fx.retriever);
    Deps deps = fx.deps();
    deps.retriever = &slow;

    Options options = fx.options(Method::Dmqr);
    options.config.concurrency_bound = 1;
    options.retrieval_budget_ms = 5;
    const PipelineTrace trace = run(fx.query(), options, deps);

    REQUIRE(trace.retrievals.size() == 5);
    CHECK_FALSE(trace.retrievals[0].skipped_budget);
    int skipped = 0;
    for (const RetrievalRecord& record : trace.retrievals) {
        if (record.skipped_budget) {
            ++skipped;
            CHECK(record.list.docs.empty());
        }
    }
    CHECK(skipped == 4);
    CHECK(trace.answer.text == "generated answer");
}

TEST_CASE("event sink sees one event per stage milestone") {
    Fixture fx;
    CollectingSink sink;
    Deps deps = fx.deps();
    deps.events = &sink;
    run(fx.query(), fx.options(Method::Dmqr), deps);

    CHECK(sink.count("rewrite") == 4);
    CHECK(sink.count("retrieval") == 5);
    CHECK(sink.count("fusion") == 1);
    CHECK(sink.count("answer") == 1);
    CHECK(sink.count("selection") == 0);
}

TEST_CASE("assemble_context numbers exactly k documents") {
    Fixture fx;
    const PipelineTrace trace = run(fx.query(), fx.options(Method::Dmqr), fx.deps());
    REQUIRE(trace.fused.size() == 5);

    const std::string prompt =
        assemble_context(fx.query(), trace.fused, 2, 1000, fx.templates);
    CHECK(prompt.find("Question: alpha") != std::string::npos);
    CHECK(prompt.find("[1] " + trace.fused[0].doc.title) != std::string::npos);
    CHECK(prompt.find("[2] " + trace.fused[1].doc.title) != std::string::npos);
    CHECK(prompt.find("[3]") == std::string::npos);
    CHECK(prompt.find(trace.fused[2].doc.content) == std::string::npos);
}

TEST_CASE("assemble_context marks an empty context explicitly") {
    Fixture fx;
    const std::string prompt = assemble_context(fx.query(), {}, 5, 1000, fx.templates);
    CHECK(prompt.find("Question: alpha") != std::string::npos);
    CHECK(prompt.find("(no documents retrieved)") != std::string::npos);
}

TEST_CASE("assemble_context trims content to the character budget") {
    Fixture fx;
    rank::FusedDoc fused;
    fused.doc.key = DocumentKey{"key:long"};
    fused.doc.title = "Long";
    fused.doc.content = "word word word word word word word word word word";
    const std::string prompt = assemble_context(fx.query(), {fused}, 1, 20, fx.templates);
    CHECK(prompt.find("word word word word w") == std::string::npos);
    CHECK(prompt.find("word word word word\n") != std::string::npos);
}

TEST_CASE("method names parse and print round trip") {
    for (const Method method : all_methods()) {
        CHECK(method_from_string(to_string(method)) == method);
    }
    CHECK(method_from_string("rag-fusion") == Method::RagFusion);
    CHECK(method_from_string("DMQR_ADAPTIVE") == Method::DmqrAdaptive);
    try {
        method_from_string("bogus");
        FAIL("expected a throw");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::InvalidConfig);
    }
}

TEST_CASE("missing dependencies are rejected up front") {
    Fixture fx;

    Deps no_completer = fx.deps();
    no_completer.completer = nullptr;
    CHECK_THROWS_AS(run(fx.query(), fx.options(Method::Dmqr), no_completer), Error);

    Deps no_pool = fx.deps();
    no_pool.pool = nullptr;
    CHECK_THROWS_AS(run(fx.query(), fx.options(Method::Dmqr), no_pool), Error);
    // Baselines do not need the pool.
    CHECK_NOTHROW(run(fx.query(), fx.options(Method::Oqr), no_pool));

    Options remote = fx.options(Method::Dmqr);
    remote.config.reranker_mode = RerankerMode::Remote;
    CHECK_THROWS_AS(run(fx.query(), remote, fx.deps()), Error);

    CHECK_THROWS_AS(run(Query{"   ", "q"}, fx.options(Method::Dmqr), fx.deps()), Error);
}
