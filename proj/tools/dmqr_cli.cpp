#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmqr/config.hpp"
#include "dmqr/errors.hpp"
#include "dmqr/evaluation.hpp"
#include "dmqr/llm.hpp"
#include "dmqr/model.hpp"
#include "dmqr/pipeline.hpp"
#include "dmqr/ranking.hpp"
#include "dmqr/retrieval.hpp"
#include "dmqr/rewrite.hpp"
#include "dmqr/selection.hpp"
#include "dmqr/templates.hpp"
#include "dmqr/text.hpp"
#include "dmqr/tracing.hpp"

namespace {

using namespace dmqr;
using nlohmann::json;

/// 0: success, including degraded runs. 1: problems with user data (corpus,
/// dataset, query, output files). 2: dependency or configuration problems.
int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyCorpus:
        case ErrorCode::DuplicateDocId:
        case ErrorCode::EmptyDocument:
        case ErrorCode::ParseFailure:
        case ErrorCode::EmptyQuery:
        case ErrorCode::IoError:
            return 1;
        default:
            return 2;
    }
}

std::string upper(std::string s) {
    for (char& c : s) {
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return s;
}

std::string join_ids(const std::vector<StrategyId>& ids) {
    std::string out;
    for (const StrategyId& id : ids) {
        if (!out.empty()) {
            out += ", ";
        }
        out += id.name();
    }
    return out;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot write " + path.string());
        }
        out << j.dump(2) << "\n";
        if (!out) {
            throw Error(ErrorCode::IoError, "failed writing " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorCode::IoError, "cannot move " + path.string() + ": " + ec.message());
    }
}

/// Engine components wired once from the resolved config, built lazily so
/// commands only pay for what they touch.
class Runtime {
public:
    Runtime(config::EngineConfig config, bool verbose) : cfg_(std::move(config)) {
        templates_ = cfg_.templates_dir.empty()
                         ? llm::TemplateRegistry::builtin()
                         : llm::TemplateRegistry::load_dir(cfg_.templates_dir);
        pool_ = rewrite::StrategyPool::dmqr_default(templates_);
        if (!cfg_.demos_path.empty()) {
            demos_ = select::load_demos(cfg_.demos_path);
        }
        if (!cfg_.cache_dir.empty()) {
            cache_ = std::make_unique<retrieval::SearchCache>(cfg_.cache_dir);
        }
        if (verbose) {
            events_ = std::make_unique<trace::StderrEventSink>();
        }
    }

    const config::EngineConfig& cfg() const { return cfg_; }
    const llm::TemplateRegistry& templates() const { return templates_; }
    const rewrite::StrategyPool& pool() const { return pool_; }
    const std::vector<select::Demo>& demos() const { return demos_; }

    llm::Completer& completer() {
        if (!completer_) {
            if (!cfg_.llm_fixtures.empty()) {
                completer_ = std::make_unique<llm::ScriptedCompleter>(
                    llm::ScriptedCompleter::from_file(cfg_.llm_fixtures));
            } else if (!cfg_.llm_url.empty()) {
                llm::HttpCompleterConfig http;
                http.url = cfg_.llm_url;
                http.api_key = cfg_.llm_key;
                http.model = cfg_.llm_model;
                http.timeout_ms = cfg_.timeout_ms;
                http.max_retries = cfg_.retries;
                http.requests_per_second = cfg_.requests_per_second;
                completer_ = std::make_unique<llm::HttpCompleter>(http);
            } else {
                throw Error(ErrorCode::InvalidConfig,
                            "no language model configured: set llm_url (or DMQR_LLM_URL), "
                            "or llm_fixtures for the scripted backend");
            }
        }
        return *completer_;
    }

    retrieval::Retriever& retriever() {
        if (!retriever_) {
            if (cfg_.retriever == "remote") {
                if (cfg_.search_url.empty()) {
                    throw Error(ErrorCode::InvalidConfig,
                                "the remote retriever needs search_url (or DMQR_SEARCH_URL)");
                }
                retrieval::RemoteSearchConfig rc;
                rc.url = cfg_.search_url;
                rc.api_key = cfg_.search_key;
                rc.timeout_ms = cfg_.timeout_ms;
                rc.max_retries = cfg_.retries;
                retriever_ = std::make_unique<retrieval::RemoteRetriever>(rc);
            } else {
                retriever_ = std::make_unique<retrieval::LocalRetriever>(
                    retrieval::LocalRetriever::open(cfg_.index_path));
            }
        }
        return *retriever_;
    }

    pipeline::Options pipeline_options_for(pipeline::Method method) const {
        pipeline::Options options;
        options.config = config::pipeline_config(cfg_);
        options.method = method;
        options.fusion_count = cfg_.fusion_count;
        options.answer_temperature = cfg_.answer_temperature;
        options.context_char_budget = cfg_.context_char_budget;
        return options;
    }

    pipeline::Options pipeline_options() const {
        return pipeline_options_for(pipeline::method_from_string(cfg_.method));
    }

    pipeline::Deps deps() {
        pipeline::Deps d;
        d.completer = &completer();
        d.retriever = &retriever();
        d.cache = cache_.get();
        d.pool = &pool_;
        d.templates = &templates_;
        if (!demos_.empty()) {
            d.demos = &demos_;
        }
        if (cfg_.reranker == "remote") {
            if (cfg_.reranker_url.empty()) {
                throw Error(ErrorCode::InvalidConfig,
                            "the remote reranker needs reranker_url");
            }
            reranker_.url = cfg_.reranker_url;
            reranker_.api_key = cfg_.reranker_key;
            reranker_.timeout_ms = cfg_.timeout_ms;
            reranker_.max_retries = cfg_.retries;
            d.reranker = &reranker_;
        }
        d.events = events_.get();
        return d;
    }

private:
    config::EngineConfig cfg_;
    llm::TemplateRegistry templates_;
    rewrite::StrategyPool pool_;
    std::vector<select::Demo> demos_;
    std::unique_ptr<llm::Completer> completer_;
    std::unique_ptr<retrieval::Retriever> retriever_;
    std::unique_ptr<retrieval::SearchCache> cache_;
    rank::RemoteRerankConfig reranker_;
    std::unique_ptr<trace::StderrEventSink> events_;
};

int cmd_index(const std::string& corpus, const std::string& out, bool json_mode) {
    const retrieval::Bm25Index index = retrieval::Bm25Index::build_from_jsonl(corpus);
    index.save(out);
    if (json_mode) {
        std::cout << json{{"docs", index.doc_count()},
                          {"vocab", index.vocab_size()},
                          {"avg_doc_length", index.avg_doc_length()},
                          {"path", out}}
                         .dump(2)
                  << "\n";
    } else {
        std::printf("indexed %zu documents (%zu terms, avg length %.2f) -> %s\n",
                    index.doc_count(), index.vocab_size(), index.avg_doc_length(),
                    out.c_str());
    }
    return 0;
}

std::vector<StrategyId> parse_strategy_csv(const std::string& csv,
                                           const rewrite::StrategyPool& pool) {
    std::vector<StrategyId> out;
    std::stringstream stream(csv);
    std::string part;
    while (std::getline(stream, part, ',')) {
        const std::string name = upper(text::trim(part));
        if (name.empty()) {
            continue;
        }
        const StrategyId id(name);
        if (!pool.has(id)) {
            throw Error(ErrorCode::UnknownStrategy,
                        "'" + name + "' is not in the pool (valid: " + join_ids(pool.ids()) +
                            ")");
        }
        out.push_back(id);
    }
    if (out.empty()) {
        throw Error(ErrorCode::InvalidConfig, "--strategies needs at least one id");
    }
    return out;
}

int cmd_rewrite(Runtime& rt, const std::string& query_text, const std::string& csv,
                bool adaptive, bool json_mode) {
    const Query query{query_text, "cli"};
    validate_query(query);

    std::optional<select::SelectionResult> selection;
    std::vector<StrategyId> chosen;
    if (adaptive) {
        const std::vector<select::Demo>& demos =
            rt.demos().empty() ? select::builtin_demos() : rt.demos();
        selection = select::select_strategies(query, rt.pool(), demos, rt.completer(),
                                              rt.templates());
        chosen = selection->chosen;
    } else if (!csv.empty()) {
        chosen = parse_strategy_csv(csv, rt.pool());
    } else {
        chosen = rt.pool().ids();
    }

    std::vector<rewrite::RewriteOutcome> outcomes;
    outcomes.reserve(chosen.size());
    for (const StrategyId& strategy : chosen) {
        outcomes.push_back(
            rewrite::rewrite_with_fallback(rt.pool(), strategy, query, rt.completer()));
    }

    if (json_mode) {
        json rewrites = json::array();
        for (const rewrite::RewriteOutcome& outcome : outcomes) {
            rewrites.push_back(json{{"strategy", outcome.rewrite.strategy.name()},
                                    {"text", outcome.rewrite.text},
                                    {"fallback", outcome.fallback},
                                    {"note", outcome.note}});
        }
        json out{{"query", query_text}, {"rewrites", rewrites}};
        if (selection.has_value()) {
            json ids = json::array();
            for (const StrategyId& id : selection->chosen) {
                ids.push_back(id.name());
            }
            out["selection"] = json{{"chosen", ids},
                                    {"raw", selection->raw},
                                    {"fallback_used", selection->fallback_used}};
        }
        std::cout << out.dump(2) << "\n";
    } else {
        if (selection.has_value()) {
            std::cout << "Selected strategies: " << join_ids(selection->chosen);
            if (selection->fallback_used) {
                std::cout << "  (selector output unusable, using the whole pool)";
            }
            std::cout << "\n";
        }
        for (const rewrite::RewriteOutcome& outcome : outcomes) {
            std::cout << outcome.rewrite.strategy.name() << ": " << outcome.rewrite.text;
            if (outcome.fallback) {
                std::cout << "  [unusable rewrite, kept the original query]";
            }
            std::cout << "\n";
        }
    }
    return 0;
}

std::vector<std::string> collect_warnings(const pipeline::PipelineTrace& trace) {
    std::vector<std::string> out;
    if (trace.selection_failed) {
        out.push_back("strategy selection failed, used the whole pool: " +
                      trace.selection_error);
    } else if (trace.selection.has_value() && trace.selection->fallback_used) {
        out.push_back("selector output had no usable strategy ids, used the whole pool");
    }
    if (trace.fusion_shortfall > 0) {
        out.push_back(std::to_string(trace.fusion_shortfall) +
                      " fusion variant(s) did not parse");
    }
    for (const pipeline::RewriteRecord& record : trace.rewrites) {
        if (record.fallback) {
            out.push_back("rewrite " + record.strategy.name() +
                          " was unusable, retrieved with the original query");
        }
    }
    for (const pipeline::RetrievalRecord& record : trace.retrievals) {
        if (record.failed) {
            out.push_back("retrieval for " + record.strategy.name() + " failed: " +
                          record.error);
        }
        if (record.skipped_budget) {
            out.push_back("retrieval for " + record.strategy.name() +
                          " skipped: retrieval budget exhausted");
        }
    }
    if (trace.reranker_fallback) {
        out.push_back("remote reranker failed, fused with reciprocal ranks: " +
                      trace.reranker_error);
    }
    return out;
}

int cmd_ask(Runtime& rt, const std::string& query_text, const std::string& trace_out,
            bool json_mode) {
    const Query query{query_text, "cli"};
    const pipeline::PipelineTrace trace =
        pipeline::run(query, rt.pipeline_options(), rt.deps());
    const std::vector<std::string> warnings = collect_warnings(trace);

    if (!trace_out.empty()) {
        write_json_file(pipeline::trace_to_json(trace), trace_out);
    }

    if (json_mode) {
        json sources = json::array();
        for (const rank::FusedDoc& fused : trace.context) {
            sources.push_back(json{{"title", fused.doc.title}, {"key", fused.doc.key.value}});
        }
        std::cout << json{{"answer", trace.answer.text},
                          {"method", pipeline::to_string(trace.method)},
                          {"sources", sources},
                          {"warnings", warnings}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << trace.answer.text << "\n";
        if (!trace.context.empty()) {
            std::cout << "\nSources:\n";
            for (std::size_t i = 0; i < trace.context.size(); ++i) {
                const Document& doc = trace.context[i].doc;
                std::cout << "  [" << i + 1 << "] "
                          << (doc.title.empty() ? doc.key.value : doc.title) << "\n";
            }
        }
    }
    for (const std::string& warning : warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    return 0;
}

void print_report_table(const std::vector<eval::MetricsReport>& reports) {
    if (reports.empty()) {
        return;
    }
    const std::string h_label = "h@" + std::to_string(reports.front().k);
    const std::string p_label = "p@" + std::to_string(reports.front().k);
    const bool graded = reports.front().graded_answers;

    std::printf("%-14s %8s %8s %8s %8s %10s", "method", h_label.c_str(), p_label.c_str(),
                "em", "f1", "rewrites");
    if (graded) {
        std::printf(" %8s", "acc");
    }
    std::printf("\n");
    for (const eval::MetricsReport& report : reports) {
        std::printf("%-14s %8.3f %8.3f %8.3f %8.3f %10.2f", report.method.c_str(),
                    report.aggregates.h_at_k, report.aggregates.p_at_k,
                    report.aggregates.em, report.aggregates.f1,
                    report.aggregates.mean_rewrites);
        if (graded) {
            std::printf(" %8.3f", report.aggregates.acc.value_or(0.0));
        }
        std::printf("\n");
    }
}

int cmd_eval(Runtime& rt, const std::string& dataset_path, const std::string& out_path,
             const std::string& judge_name, bool grade, int limit, bool json_mode) {
    std::vector<eval::EvalItem> dataset = eval::load_dataset_jsonl(dataset_path);
    if (limit > 0 && static_cast<std::size_t>(limit) < dataset.size()) {
        dataset.resize(static_cast<std::size_t>(limit));
    }

    std::vector<pipeline::Method> methods;
    if (text::to_lower(rt.cfg().method) == "all") {
        methods = pipeline::all_methods();
    } else {
        methods.push_back(pipeline::method_from_string(rt.cfg().method));
    }

    std::unique_ptr<eval::RelevanceJudge> judge;
    if (judge_name == "llm") {
        judge = std::make_unique<eval::LlmJudge>(rt.completer(), rt.templates());
    } else {
        auto* local = dynamic_cast<retrieval::LocalRetriever*>(&rt.retriever());
        if (local == nullptr) {
            throw Error(ErrorCode::InvalidConfig,
                        "gold-label judging needs the local retriever; use --judge llm");
        }
        judge = std::make_unique<eval::GoldLabelJudge>(local->index());
    }

    const pipeline::Deps deps = rt.deps();
    std::vector<eval::MetricsReport> reports;
    reports.reserve(methods.size());
    for (const pipeline::Method method : methods) {
        eval::ExperimentOptions options;
        options.pipeline = rt.pipeline_options_for(method);
        options.parallelism = rt.cfg().eval_parallelism;
        options.grade_answers = grade;
        reports.push_back(eval::run_experiment(dataset, options, deps, *judge));
    }

    if (json_mode) {
        if (reports.size() == 1) {
            std::cout << eval::report_to_json(reports.front()).dump(2) << "\n";
        } else {
            json all = json::array();
            for (const eval::MetricsReport& report : reports) {
                all.push_back(eval::report_to_json(report));
            }
            std::cout << all.dump(2) << "\n";
        }
    } else {
        print_report_table(reports);
    }

    if (!out_path.empty()) {
        if (reports.size() == 1) {
            eval::write_report(reports.front(), out_path);
        } else {
            json all = json::array();
            for (const eval::MetricsReport& report : reports) {
                all.push_back(eval::report_to_json(report));
            }
            write_json_file(all, out_path);
        }
        if (!json_mode) {
            std::cout << "report written to " << out_path << "\n";
        }
    }
    return 0;
}

int cmd_cache(Runtime& rt, bool clear, bool json_mode) {
    if (rt.cfg().cache_dir.empty()) {
        throw Error(ErrorCode::InvalidConfig,
                    "cache commands need cache_dir (or DMQR_CACHE_DIR)");
    }
    retrieval::SearchCache cache(rt.cfg().cache_dir);
    if (clear) {
        const std::size_t removed = cache.clear();
        if (json_mode) {
            std::cout << json{{"removed", removed}}.dump(2) << "\n";
        } else {
            std::cout << "removed " << removed << " cache entries\n";
        }
    } else {
        const retrieval::SearchCache::DiskStats stats = cache.disk_stats();
        if (json_mode) {
            std::cout << json{{"entries", stats.entries},
                              {"bytes", stats.bytes},
                              {"dir", cache.dir().string()}}
                             .dump(2)
                      << "\n";
        } else {
            std::cout << "entries: " << stats.entries << "\n"
                      << "bytes:   " << stats.bytes << "\n"
                      << "dir:     " << cache.dir().string() << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-query rewriting retrieval-augmented answering engine"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::optional<std::filesystem::path> config_path;
    config::KeyValues overlay;
    std::vector<std::string> set_pairs;
    bool json_mode = false;
    bool verbose = false;
    bool show_config = false;
    std::string trace_out;

    app.add_option_function<std::string>(
        "--config", [&](const std::string& v) { config_path = v; },
        "Config file (flat JSON object of settings)");
    app.add_flag("--json", json_mode, "Machine-readable output");
    app.add_flag("--verbose", verbose, "Stream NDJSON pipeline events to stderr");
    app.add_flag("--show-config", show_config,
                 "Print the resolved configuration (secrets redacted) and exit");
    app.add_option("--trace-out", trace_out, "Write the full run trace JSON here (ask)");
    app.add_option("--set", set_pairs, "KEY=VALUE setting override (repeatable)");

    const auto overlay_option = [&](const std::string& flag, const std::string& key,
                                    const std::string& help) {
        app.add_option_function<std::string>(
            flag, [&overlay, key](const std::string& v) { overlay[key] = v; }, help);
    };
    overlay_option("--method", "method",
                   "oqr, rewrite, hyde, rag_fusion, dmqr, dmqr_adaptive (eval also: all)");
    overlay_option("--retriever", "retriever", "local or remote");
    overlay_option("--reranker", "reranker", "rrf, lexical or remote");
    overlay_option("--selection", "selection", "all or adaptive");
    overlay_option("--llm-url", "llm_url", "Chat-completions endpoint");
    overlay_option("--llm-key", "llm_key", "API key for the language model");
    overlay_option("--llm-model", "llm_model", "Model name sent with each request");
    overlay_option("--llm-fixtures", "llm_fixtures",
                   "Scripted completion fixtures (JSON object file)");
    overlay_option("--search-url", "search_url", "Remote search endpoint");
    overlay_option("--search-key", "search_key", "API key for remote search");
    overlay_option("--index", "index_path", "Local BM25 index file");
    overlay_option("--cache-dir", "cache_dir", "Search response cache directory");
    overlay_option("--reranker-url", "reranker_url", "Remote reranker endpoint");
    overlay_option("--templates-dir", "templates_dir",
                   "Directory of <name>.txt prompt overrides");
    overlay_option("--demos", "demos_path", "Selection demonstrations JSON file");
    overlay_option("--m", "m", "Documents retrieved per query");
    overlay_option("--k", "k", "Documents handed to the answer model");
    overlay_option("--concurrency", "concurrency", "Retrieval fan-out bound");
    overlay_option("--eval-parallelism", "eval_parallelism",
                   "Items evaluated concurrently");

    auto* index_cmd = app.add_subcommand("index", "Build a BM25 index from a JSONL corpus");
    std::string corpus_path;
    std::string index_out;
    index_cmd->add_option("--corpus", corpus_path, "JSONL corpus, one document per line")
        ->required();
    index_cmd->add_option("--out", index_out, "Index file to write")->required();

    auto* rewrite_cmd =
        app.add_subcommand("rewrite", "Show the strategy rewrites for a query");
    std::string rewrite_query;
    std::string strategies_csv;
    bool adaptive = false;
    rewrite_cmd->add_option("query", rewrite_query, "The query to rewrite")->required();
    rewrite_cmd->add_option("--strategies", strategies_csv,
                            "Comma-separated strategy ids (default: the whole pool)");
    rewrite_cmd->add_flag("--adaptive", adaptive, "Let the selector pick the strategies");

    auto* ask_cmd = app.add_subcommand("ask", "Answer one question end to end");
    std::string ask_query;
    ask_cmd->add_option("query", ask_query, "The question to answer")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Run the evaluation harness on a dataset");
    std::string dataset_path;
    std::string eval_out;
    std::string judge_name = "gold";
    bool grade = false;
    int limit = 0;
    eval_cmd->add_option("--dataset", dataset_path, "JSONL items with questions and golds")
        ->required();
    eval_cmd->add_option("--out", eval_out, "Write the metrics report JSON here");
    eval_cmd->add_option("--judge", judge_name, "gold (local index labels) or llm")
        ->check(CLI::IsMember({"gold", "llm"}));
    eval_cmd->add_flag("--grade", grade, "Add the LLM-graded answer accuracy column");
    eval_cmd->add_option("--limit", limit, "Evaluate only the first N items");

    auto* cache_cmd = app.add_subcommand("cache", "Inspect or clear the search cache");
    cache_cmd->require_subcommand(1);
    auto* cache_stats = cache_cmd->add_subcommand("stats", "Entry count and bytes on disk");
    auto* cache_clear = cache_cmd->add_subcommand("clear", "Delete every cache entry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        for (const std::string& pair : set_pairs) {
            const std::size_t eq = pair.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw Error(ErrorCode::InvalidConfig,
                            "--set expects KEY=VALUE, got '" + pair + "'");
            }
            overlay[pair.substr(0, eq)] = pair.substr(eq + 1);
        }
        const config::EngineConfig cfg = config::resolve(config_path, overlay);

        if (show_config) {
            std::cout << config::to_redacted_json(cfg).dump(2) << "\n";
            return 0;
        }
        if (*index_cmd) {
            return cmd_index(corpus_path, index_out, json_mode);
        }

        Runtime rt(cfg, verbose);
        if (*rewrite_cmd) {
            return cmd_rewrite(rt, rewrite_query, strategies_csv, adaptive, json_mode);
        }
        if (*ask_cmd) {
            return cmd_ask(rt, ask_query, trace_out, json_mode);
        }
        if (*eval_cmd) {
            return cmd_eval(rt, dataset_path, eval_out, judge_name, grade, limit, json_mode);
        }
        if (*cache_stats) {
            return cmd_cache(rt, false, json_mode);
        }
        if (*cache_clear) {
            return cmd_cache(rt, true, json_mode);
        }

        std::cout << app.help();
        return 0;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code_for(err.code());
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
}
