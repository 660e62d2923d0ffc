#include "dmqr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

namespace dmqr::config {
namespace {

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const int parsed = std::stoi(value, &consumed);
        if (consumed != value.size()) {
            throw std::invalid_argument(value);
        }
        return parsed;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidConfig, key + " needs an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t consumed = 0;
        const double parsed = std::stod(value, &consumed);
        if (consumed != value.size()) {
            throw std::invalid_argument(value);
        }
        return parsed;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidConfig, key + " needs a number, got '" + value + "'");
    }
}

std::string parse_choice(const std::string& key, const std::string& value,
                         const std::vector<std::string>& allowed) {
    const std::string lowered = text::to_lower(text::trim(value));
    for (const std::string& candidate : allowed) {
        if (lowered == candidate) {
            return lowered;
        }
    }
    std::string expected;
    for (const std::string& candidate : allowed) {
        if (!expected.empty()) {
            expected += ", ";
        }
        expected += candidate;
    }
    throw Error(ErrorCode::InvalidConfig,
                key + " must be one of {" + expected + "}, got '" + value + "'");
}

struct Field {
    std::string key;
    std::function<void(EngineConfig&, const std::string&)> set;
    std::function<nlohmann::json(const EngineConfig&)> get;
    bool secret = false;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"llm_url", [](EngineConfig& c, const std::string& v) { c.llm_url = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.llm_url); }},
        {"llm_key", [](EngineConfig& c, const std::string& v) { c.llm_key = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.llm_key); }, true},
        {"llm_model", [](EngineConfig& c, const std::string& v) { c.llm_model = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.llm_model); }},
        {"llm_fixtures", [](EngineConfig& c, const std::string& v) { c.llm_fixtures = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.llm_fixtures); }},
        {"search_url", [](EngineConfig& c, const std::string& v) { c.search_url = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.search_url); }},
        {"search_key", [](EngineConfig& c, const std::string& v) { c.search_key = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.search_key); }, true},
        {"retriever",
         [](EngineConfig& c, const std::string& v) {
             c.retriever = parse_choice("retriever", v, {"local", "remote"});
         },
         [](const EngineConfig& c) { return nlohmann::json(c.retriever); }},
        {"index_path", [](EngineConfig& c, const std::string& v) { c.index_path = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.index_path); }},
        {"cache_dir", [](EngineConfig& c, const std::string& v) { c.cache_dir = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.cache_dir); }},
        {"reranker",
         [](EngineConfig& c, const std::string& v) {
             c.reranker = parse_choice("reranker", v, {"rrf", "lexical", "remote"});
         },
         [](const EngineConfig& c) { return nlohmann::json(c.reranker); }},
        {"reranker_url", [](EngineConfig& c, const std::string& v) { c.reranker_url = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.reranker_url); }},
        {"reranker_key", [](EngineConfig& c, const std::string& v) { c.reranker_key = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.reranker_key); }, true},
        {"selection",
         [](EngineConfig& c, const std::string& v) {
             c.selection = parse_choice("selection", v, {"all", "adaptive"});
         },
         [](const EngineConfig& c) { return nlohmann::json(c.selection); }},
        {"method", [](EngineConfig& c, const std::string& v) { c.method = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.method); }},
        {"m",
         [](EngineConfig& c, const std::string& v) { c.per_query_limit = parse_int("m", v); },
         [](const EngineConfig& c) { return nlohmann::json(c.per_query_limit); }},
        {"k", [](EngineConfig& c, const std::string& v) { c.context_size = parse_int("k", v); },
         [](const EngineConfig& c) { return nlohmann::json(c.context_size); }},
        {"rrf_k",
         [](EngineConfig& c, const std::string& v) { c.rrf_constant = parse_int("rrf_k", v); },
         [](const EngineConfig& c) { return nlohmann::json(c.rrf_constant); }},
        {"concurrency",
         [](EngineConfig& c, const std::string& v) {
             c.concurrency = parse_int("concurrency", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.concurrency); }},
        {"templates_dir", [](EngineConfig& c, const std::string& v) { c.templates_dir = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.templates_dir); }},
        {"demos_path", [](EngineConfig& c, const std::string& v) { c.demos_path = v; },
         [](const EngineConfig& c) { return nlohmann::json(c.demos_path); }},
        {"timeout_ms",
         [](EngineConfig& c, const std::string& v) { c.timeout_ms = parse_int("timeout_ms", v); },
         [](const EngineConfig& c) { return nlohmann::json(c.timeout_ms); }},
        {"retries",
         [](EngineConfig& c, const std::string& v) { c.retries = parse_int("retries", v); },
         [](const EngineConfig& c) { return nlohmann::json(c.retries); }},
        {"rps",
         [](EngineConfig& c, const std::string& v) {
             c.requests_per_second = parse_double("rps", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.requests_per_second); }},
        {"answer_temperature",
         [](EngineConfig& c, const std::string& v) {
             c.answer_temperature = parse_double("answer_temperature", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.answer_temperature); }},
        {"context_char_budget",
         [](EngineConfig& c, const std::string& v) {
             c.context_char_budget = parse_int("context_char_budget", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.context_char_budget); }},
        {"fusion_count",
         [](EngineConfig& c, const std::string& v) {
             c.fusion_count = parse_int("fusion_count", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.fusion_count); }},
        {"eval_parallelism",
         [](EngineConfig& c, const std::string& v) {
             c.eval_parallelism = parse_int("eval_parallelism", v);
         },
         [](const EngineConfig& c) { return nlohmann::json(c.eval_parallelism); }},
    };
    return table;
}

const Field& field_for(const std::string& key) {
    for (const Field& field : fields()) {
        if (field.key == key) {
            return field;
        }
    }
    std::string listing;
    for (const std::string& known : known_keys()) {
        if (!listing.empty()) {
            listing += ", ";
        }
        listing += known;
    }
    throw Error(ErrorCode::InvalidConfig,
                "unknown config key '" + key + "' (known keys: " + listing + ")");
}

}  // namespace

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const Field& field : fields()) {
            out.push_back(field.key);
        }
        return out;
    }();
    return keys;
}

void apply(EngineConfig& cfg, const std::string& key, const std::string& value) {
    field_for(key).set(cfg, value);
}

KeyValues read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read config file " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& err) {
        throw Error(ErrorCode::InvalidConfig,
                    "config file " + path.string() + ": " + err.what());
    }
    if (!doc.is_object()) {
        throw Error(ErrorCode::InvalidConfig,
                    "config file " + path.string() + " must hold a flat JSON object");
    }
    KeyValues values;
    for (const auto& [key, value] : doc.items()) {
        if (value.is_string()) {
            values[key] = value.get<std::string>();
        } else if (value.is_number_integer()) {
            values[key] = std::to_string(value.get<long long>());
        } else if (value.is_number_float()) {
            values[key] = nlohmann::json(value).dump();
        } else if (value.is_boolean()) {
            values[key] = value.get<bool>() ? "true" : "false";
        } else {
            throw Error(ErrorCode::InvalidConfig, "config file " + path.string() + ": key '" +
                                                      key + "' must be a scalar");
        }
    }
    return values;
}

KeyValues from_environment() {
    static const std::pair<const char*, const char*> vars[] = {
        {"DMQR_LLM_URL", "llm_url"},       {"DMQR_LLM_KEY", "llm_key"},
        {"DMQR_LLM_MODEL", "llm_model"},   {"DMQR_SEARCH_URL", "search_url"},
        {"DMQR_SEARCH_KEY", "search_key"}, {"DMQR_CACHE_DIR", "cache_dir"},
    };
    KeyValues values;
    for (const auto& [env_name, key] : vars) {
        const char* value = std::getenv(env_name);
        if (value != nullptr && *value != '\0') {
            values[key] = value;
        }
    }
    return values;
}

std::filesystem::path default_config_path() { return "dmqr.json"; }

EngineConfig resolve(const std::optional<std::filesystem::path>& file, const KeyValues& flags) {
    EngineConfig cfg;
    const auto apply_all = [&cfg](const KeyValues& values) {
        for (const auto& [key, value] : values) {
            apply(cfg, key, value);
        }
    };

    if (file.has_value()) {
        apply_all(read_config_file(*file));
    } else if (std::filesystem::exists(default_config_path())) {
        apply_all(read_config_file(default_config_path()));
    }
    apply_all(from_environment());
    apply_all(flags);
    return cfg;
}

nlohmann::json to_redacted_json(const EngineConfig& cfg) {
    nlohmann::json out = nlohmann::json::object();
    for (const Field& field : fields()) {
        nlohmann::json value = field.get(cfg);
        if (field.secret && value.is_string() && !value.get<std::string>().empty()) {
            value = "<redacted>";
        }
        out[field.key] = std::move(value);
    }
    return out;
}

PipelineConfig pipeline_config(const EngineConfig& cfg) {
    PipelineConfig out;
    out.per_query_limit = cfg.per_query_limit;
    out.context_size = cfg.context_size;
    out.rrf_constant = cfg.rrf_constant;
    out.concurrency_bound = cfg.concurrency;
    out.selection_mode = cfg.selection == "adaptive" ? SelectionMode::Adaptive
                                                     : SelectionMode::FixedAll;
    out.reranker_mode = reranker_mode_from_string(cfg.reranker);
    return out;
}

}  // namespace dmqr::config
