#pragma once

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmqr/model.hpp"

namespace dmqr::config {

/// Fully resolved engine settings. Sources are layered in the order
/// defaults < config file < environment < flags; every consumer sees the
/// merged result, never an individual layer.
struct EngineConfig {
    std::string llm_url;
    std::string llm_key;
    std::string llm_model = "default";
    std::string llm_fixtures;  // fixture file; non-empty selects the scripted backend

    std::string search_url;
    std::string search_key;
    std::string retriever = "local";  // local | remote
    std::string index_path = "index.dmqr";
    std::string cache_dir;  // empty: responses are not cached

    std::string reranker = "rrf";  // rrf | lexical | remote
    std::string reranker_url;
    std::string reranker_key;

    std::string selection = "all";  // all | adaptive
    std::string method = "dmqr";

    int per_query_limit = 10;  // key "m": documents per query-set member
    int context_size = 5;      // key "k": documents handed to the answer model
    int rrf_constant = 60;
    int concurrency = 4;

    std::string templates_dir;  // empty: compiled-in prompts
    std::string demos_path;     // empty: compiled-in selection demonstrations

    int timeout_ms = 10000;
    int retries = 2;
    double requests_per_second = 0.0;
    double answer_temperature = 0.2;
    int context_char_budget = 1000;
    int fusion_count = 4;
    int eval_parallelism = 1;
};

using KeyValues = std::map<std::string, std::string>;

/// All recognized keys, in the order to_redacted_json prints them.
const std::vector<std::string>& known_keys();

/// Sets one field from its string form. "m", "k" and "rrf_k" are the short
/// spellings of per_query_limit, context_size and rrf_constant. Throws
/// InvalidConfig on an unknown key, an unparseable number, or an enum value
/// outside its set.
void apply(EngineConfig& cfg, const std::string& key, const std::string& value);

/// Flat JSON object of settings; values may be strings, numbers or booleans.
/// Throws IoError when unreadable, InvalidConfig on structure problems.
KeyValues read_config_file(const std::filesystem::path& path);

/// The DMQR_* environment overlay: DMQR_LLM_URL, DMQR_LLM_KEY,
/// DMQR_LLM_MODEL, DMQR_SEARCH_URL, DMQR_SEARCH_KEY, DMQR_CACHE_DIR.
KeyValues from_environment();

/// Where resolve() looks when no --config is given.
std::filesystem::path default_config_path();

/// Layered resolution. An explicit `file` must exist (IoError); the default
/// path is used only when present.
EngineConfig resolve(const std::optional<std::filesystem::path>& file, const KeyValues& flags);

/// Every setting, with key material replaced by "<redacted>".
nlohmann::json to_redacted_json(const EngineConfig& cfg);

/// The pipeline-level view of these settings. Throws InvalidConfig on bad
/// enum values (already prevented when the config came through apply()).
PipelineConfig pipeline_config(const EngineConfig& cfg);

}  // namespace dmqr::config
