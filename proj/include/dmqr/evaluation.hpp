#pragma once

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dmqr/llm.hpp"
#include "dmqr/model.hpp"
#include "dmqr/pipeline.hpp"
#include "dmqr/retrieval.hpp"
#include "dmqr/templates.hpp"

namespace dmqr::eval {

struct EvalItem {
    std::string id;
    std::string question;
    std::vector<std::string> gold_answers;
    std::vector<std::string> gold_doc_ids;  // corpus ids, for gold-label judging
};

/// Non-empty question plus at least one gold answer or gold doc id.
void validate_item(const EvalItem& item);

/// JSON Lines, one object per item. Accepted spellings: question|query;
/// answer|answers|gold_answers (string or array of strings); id|_id|qid,
/// else the 1-based line number; gold_doc_ids|gold_ids. Blank lines are
/// skipped; every parse error names its line.
std::vector<EvalItem> load_dataset_jsonl(const std::filesystem::path& path);

enum class JudgeKind { GoldLabels, LlmJudge };

struct Judgment {
    DocumentKey key;
    bool relevant = false;
    JudgeKind judge = JudgeKind::GoldLabels;
    bool unparseable = false;  // judge output had no leading yes/no
};

/// Decides whether a retrieved document answers an item's question.
/// Implementations must tolerate concurrent calls from eval workers.
class RelevanceJudge {
public:
    virtual ~RelevanceJudge() = default;
    virtual Judgment judge(const EvalItem& item, const Document& doc) = 0;
};

/// Relevant iff the document's key maps back to one of the item's gold
/// corpus ids. Only meaningful against a local index.
class GoldLabelJudge : public RelevanceJudge {
public:
    explicit GoldLabelJudge(const retrieval::Bm25Index& index);
    Judgment judge(const EvalItem& item, const Document& doc) override;

private:
    std::unordered_map<std::string, std::string> id_by_key_;
};

/// One yes/no completion per (question, document). The first word of the
/// completion decides; anything else is irrelevant with the unparseable
/// flag set. Completer errors propagate.
class LlmJudge : public RelevanceJudge {
public:
    LlmJudge(llm::Completer& completer, const llm::TemplateRegistry& templates);
    Judgment judge(const EvalItem& item, const Document& doc) override;

private:
    llm::Completer* completer_;
    const llm::TemplateRegistry* templates_;
};

/// 1 iff at least one judgment is relevant.
int hit_at_k(const std::vector<Judgment>& judgments);

/// Relevant count divided by k; the denominator stays k when fewer than k
/// documents were retrieved, so under-retrieval costs precision.
double precision_at_k(const std::vector<Judgment>& judgments, int k);

/// Canonical answer form: lowercase, punctuation deleted, the articles
/// a/an/the dropped as whole words, whitespace collapsed.
std::string normalize_answer(std::string_view s);

/// 1 iff the normalized prediction equals some normalized gold.
int exact_match(const std::string& pred, const std::vector<std::string>& golds);

/// Max over golds of token-multiset F1 between normalized answers. Both
/// sides empty after normalization scores 1; zero overlap scores 0.
double f1_token(const std::string& pred, const std::vector<std::string>& golds);

/// LLM-graded answer accuracy for datasets where string match is too strict.
/// Leading yes → 1, leading no → 0, anything else 0 with the flag set.
int grade_answer(const EvalItem& item, const std::string& answer, llm::Completer& completer,
                 const llm::TemplateRegistry& templates, bool* unparseable = nullptr);

struct RowMetrics {
    std::string id;
    int h_at_k = 0;
    double p_at_k = 0.0;
    int em = 0;
    double f1 = 0.0;
    int acc = 0;  // populated only when answers were graded
    int rewrite_count = 0;
    std::string error;  // non-empty: the pipeline failed, metrics are zero
};

struct Aggregates {
    double h_at_k = 0.0;
    double p_at_k = 0.0;
    double em = 0.0;
    double f1 = 0.0;
    double mean_rewrites = 0.0;
    std::optional<double> acc;
};

struct MetricsReport {
    std::string method;
    PipelineConfig config;
    int k = 0;
    bool graded_answers = false;
    std::vector<RowMetrics> rows;  // sorted by item id
    Aggregates aggregates;         // plain means over the rows above
    std::map<int, int> histogram;  // rewrite count -> number of items
};

struct ExperimentOptions {
    pipeline::Options pipeline;
    int parallelism = 1;         // item-level concurrency bound
    bool grade_answers = false;  // adds the LLM-scored accuracy column
};

/// Runs the pipeline once per item, judges the context documents, computes
/// the metrics. Per-item failures become rows with an error marker; the run
/// always completes.
MetricsReport run_experiment(const std::vector<EvalItem>& dataset,
                             const ExperimentOptions& options, const pipeline::Deps& deps,
                             RelevanceJudge& judge);

nlohmann::json report_to_json(const MetricsReport& report);

/// report_to_json written atomically. Throws IoError.
void write_report(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace dmqr::eval
