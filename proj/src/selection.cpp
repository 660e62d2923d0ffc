#include "dmqr/selection.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

namespace dmqr::select {
namespace {

// Lowercase, non-alphanumeric squashed to single spaces, padded so that
// " alias " substring search respects word boundaries.
std::string padded_normal_form(const std::string& s) {
    std::string out = " ";
    bool pending_space = false;
    for (const char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            if (pending_space && out.back() != ' ') {
                out += ' ';
            }
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            pending_space = false;
        } else {
            pending_space = true;
        }
    }
    out += ' ';
    return out;
}

std::vector<std::string> aliases_for(const StrategyId& id) {
    std::vector<std::string> aliases = {id.name()};
    if (id == StrategyId::gqr()) {
        aliases.push_back("general query rewriting");
        aliases.push_back("general rewriting");
    } else if (id == StrategyId::kwr()) {
        aliases.push_back("keyword rewriting");
        aliases.push_back("keyword extraction");
    } else if (id == StrategyId::par()) {
        aliases.push_back("pseudo answer rewriting");
        aliases.push_back("pseudo answer");
    } else if (id == StrategyId::cce()) {
        aliases.push_back("core content extraction");
    }
    return aliases;
}

bool mentioned(const std::string& padded_completion, const StrategyId& id) {
    for (const auto& alias : aliases_for(id)) {
        const std::string needle = padded_normal_form(alias);
        if (needle != "  " && padded_completion.find(needle) != std::string::npos) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::string format_strategy_descriptions(const rewrite::StrategyPool& pool) {
    std::string out;
    for (const auto& descriptor : pool.descriptors()) {
        out += "- " + descriptor.id.name() + ": " + descriptor.description + "\n";
    }
    if (!out.empty()) {
        out.pop_back();
    }
    return out;
}

std::string format_demonstrations(const std::vector<Demo>& demos) {
    if (demos.empty()) {
        return "(none)";
    }
    std::string out;
    for (const auto& demo : demos) {
        out += "Query: " + demo.query + "\nChosen strategies: ";
        for (std::size_t i = 0; i < demo.chosen.size(); ++i) {
            if (i > 0) {
                out += ", ";
            }
            out += demo.chosen[i].name();
        }
        out += "\n\n";
    }
    while (!out.empty() && out.back() == '\n') {
        out.pop_back();
    }
    return out;
}

SelectionResult select_strategies(const Query& query, const rewrite::StrategyPool& pool,
                                  const std::vector<Demo>& demos, llm::Completer& completer,
                                  const llm::TemplateRegistry& templates) {
    if (pool.empty()) {
        throw Error(ErrorCode::InvalidConfig, "selection needs a non-empty strategy pool");
    }
    validate_query(query);

    llm::ChatRequest request;
    request.user = llm::render(templates.get("selection"),
                               {{"strategy_descriptions", format_strategy_descriptions(pool)},
                                {"demonstrations", format_demonstrations(demos)},
                                {"query", query.text}});
    const llm::ChatResponse response = completer.complete(request);

    SelectionResult result;
    result.raw = response.text;

    const std::string padded = padded_normal_form(response.text);
    for (const auto& descriptor : pool.descriptors()) {
        if (mentioned(padded, descriptor.id)) {
            result.chosen.push_back(descriptor.id);
        }
    }
    if (result.chosen.empty()) {
        result.fallback_used = true;
        result.chosen = pool.ids();
    }
    return result;
}

std::vector<Demo> load_demos(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read demonstrations file: " + path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& err) {
        throw Error(ErrorCode::ParseFailure,
                    "demonstrations file " + path.string() + ": " + err.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::ParseFailure,
                    "demonstrations file " + path.string() + ": expected a JSON array");
    }
    std::vector<Demo> demos;
    for (const auto& entry : doc) {
        Demo demo;
        demo.query = entry.value("query", "");
        if (text::trim(demo.query).empty()) {
            throw Error(ErrorCode::ParseFailure,
                        "demonstrations file " + path.string() + ": demo with empty query");
        }
        if (!entry.contains("chosen") || !entry["chosen"].is_array() || entry["chosen"].empty()) {
            throw Error(ErrorCode::ParseFailure, "demonstrations file " + path.string() +
                                                     ": demo needs a non-empty chosen list");
        }
        for (const auto& id : entry["chosen"]) {
            demo.chosen.emplace_back(id.get<std::string>());
        }
        demos.push_back(std::move(demo));
    }
    return demos;
}

std::vector<Demo> builtin_demos() {
    return {
        {"whos the ceo of twiter now??", {StrategyId::gqr()}},
        {"what team won the 2014 world cup final", {StrategyId::par()}},
        {"Who wrote the novel that the movie Blade Runner is based on?",
         {StrategyId::gqr(), StrategyId::par()}},
        {"history of the eiffel tower construction timeline details please",
         {StrategyId::kwr(), StrategyId::cce()}},
        {"I've been reading about quantum computing lately and I wonder, given all the "
         "hype, whether any company has shown a real advantage on a practical problem",
         {StrategyId::gqr(), StrategyId::cce()}},
    };
}

}  // namespace dmqr::select
