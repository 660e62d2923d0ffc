#include "dmqr/templates.hpp"

#include "dmqr/errors.hpp"

#include <fstream>
#include <sstream>

namespace dmqr::llm {

namespace {

// Keep these byte-identical to the files under templates/.
constexpr const char* kGqr =
    R"(You rewrite search queries. Produce one refined version of the query below: keep every piece of relevant information, remove filler words, fix typos and grammar, and state the intent plainly. Reply with the refined query on a single line and nothing else.

Original query: {query}
Refined query:)";

constexpr const char* kKwr =
    R"(You extract search keywords. List all keywords from the query below, especially nouns and subjects, separated by commas. Do not add words that are not implied by the query. Reply with the keyword list and nothing else.

Query: {query}
Keywords:)";

constexpr const char* kPar =
    R"(Write a short plausible answer to the question below, as if you knew the facts. One to three sentences, concrete and specific. It will be used as a search string, so favour informative wording over hedging. Reply with the answer text only.

Question: {query}
Pseudo-answer:)";

constexpr const char* kCce =
    R"(You condense verbose search queries. Extract only the essential information need from the query below, discarding background detail and redundant qualifiers. Reply with the condensed query on a single line and nothing else.

Original query: {query}
Core content:)";

constexpr const char* kBaselineRewrite =
    R"(Rewrite the query below so a web search engine retrieves better documents for it. Reply with the rewritten query on a single line and nothing else.

Original query: {query}
Rewritten query:)";

constexpr const char* kHyde =
    R"(Write a short encyclopedia-style passage that would answer the question below. Two to four sentences. The passage is used to retrieve real documents, so use the vocabulary such documents would use. Reply with the passage only.

Question: {query}
Passage:)";

constexpr const char* kFusionVariants =
    R"(Generate {count} different phrasings of the query below for a search engine. Vary the wording and emphasis between them. Reply with a numbered list, one variant per line, and nothing else.

Query: {query}
Variants:)";

constexpr const char* kSelection =
    R"(You choose query rewriting strategies. Below are the available strategies, each with the query types it suits, followed by worked examples.

Strategies:
{strategy_descriptions}

Examples:
{demonstrations}

Pick the strategies that would genuinely help retrieval for the query below. Choose as few as possible; reply with their ids separated by commas and nothing else.

Query: {query}
Chosen strategies:)";

constexpr const char* kAnswer =
    R"(Answer the question using the numbered context documents below. Prefer facts from the context over your own knowledge; if the context does not contain the answer, say so briefly.

Question: {query}

Context:
{context}

Answer:)";

constexpr const char* kJudgeRelevance =
    R"(Does the document below help answer the question? Reply with "yes" or "no" as the first word, optionally followed by a short reason.

Question: {question}

Document title: {title}
Document text: {content}

Relevant:)";

constexpr const char* kJudgeAnswer =
    R"(Grade the answer below against the reference answers. Reply with "yes" as the first word if the answer conveys the same fact as any reference, otherwise "no".

Question: {question}
Answer: {answer}
Reference answers: {golds}

Correct:)";

}  // namespace

TemplateRegistry TemplateRegistry::builtin() {
    TemplateRegistry reg;
    reg.put({"gqr", kGqr});
    reg.put({"kwr", kKwr});
    reg.put({"par", kPar});
    reg.put({"cce", kCce});
    reg.put({"baseline_rewrite", kBaselineRewrite});
    reg.put({"hyde", kHyde});
    reg.put({"fusion_variants", kFusionVariants});
    reg.put({"selection", kSelection});
    reg.put({"answer", kAnswer});
    reg.put({"judge_relevance", kJudgeRelevance});
    reg.put({"judge_answer", kJudgeAnswer});
    return reg;
}

TemplateRegistry TemplateRegistry::load_dir(const std::filesystem::path& dir) {
    TemplateRegistry reg = builtin();
    if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorCode::IoError, "template directory not found: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::ostringstream body;
        body << in.rdbuf();
        std::string text = body.str();
        // Files end with a trailing newline; the compiled-in bodies do not.
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        reg.put({entry.path().stem().string(), std::move(text)});
    }
    return reg;
}

const PromptTemplate& TemplateRegistry::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw Error(ErrorCode::InvalidConfig, "no prompt template named '" + name + "'");
    }
    return it->second;
}

bool TemplateRegistry::has(const std::string& name) const { return by_name_.count(name) > 0; }

std::vector<std::string> TemplateRegistry::names() const {
    std::vector<std::string> out;
    out.reserve(by_name_.size());
    for (const auto& [name, tpl] : by_name_) out.push_back(name);
    return out;
}

void TemplateRegistry::put(PromptTemplate tpl) { by_name_[tpl.name] = std::move(tpl); }

}  // namespace dmqr::llm
