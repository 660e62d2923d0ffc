#include "dmqr/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "dmqr/errors.hpp"
#include "dmqr/text.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmqr::eval {

namespace {

using json = nlohmann::json;

/// First word of a judge completion, lowercased. Empty when the completion
/// does not start with letters.
std::string leading_word(const std::string& completion) {
    std::size_t i = 0;
    while (i < completion.size() &&
           std::isspace(static_cast<unsigned char>(completion[i])) != 0) {
        ++i;
    }
    std::string word;
    while (i < completion.size() &&
           std::isalpha(static_cast<unsigned char>(completion[i])) != 0) {
        word.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(completion[i]))));
        ++i;
    }
    return word;
}

/// yes -> 1, no -> 0, anything else -> 0 + unparseable.
int parse_yes_no(const std::string& completion, bool* unparseable) {
    const std::string word = leading_word(completion);
    if (unparseable != nullptr) {
        *unparseable = word != "yes" && word != "no";
    }
    return word == "yes" ? 1 : 0;
}

std::vector<std::string> answer_tokens(std::string_view s) {
    const std::string normalized = normalize_answer(s);
    std::vector<std::string> tokens;
    std::istringstream stream(normalized);
    std::string token;
    while (stream >> token) {
        tokens.push_back(token);
    }
    return tokens;
}

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) {
        return 1.0;
    }
    if (pred.empty() || gold.empty()) {
        return 0.0;
    }
    std::unordered_map<std::string, int> counts;
    for (const std::string& token : gold) {
        ++counts[token];
    }
    int overlap = 0;
    for (const std::string& token : pred) {
        auto it = counts.find(token);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) {
        return 0.0;
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(gold.size());
    return 2.0 * p * r / (p + r);
}

std::vector<std::string> string_list(const json& value, int line, const char* field) {
    std::vector<std::string> out;
    if (value.is_string()) {
        out.push_back(value.get<std::string>());
    } else if (value.is_array()) {
        for (const json& entry : value) {
            if (!entry.is_string()) {
                throw Error(ErrorCode::ParseFailure,
                            "line " + std::to_string(line) + ": " + field +
                                " entries must be strings");
            }
            out.push_back(entry.get<std::string>());
        }
    } else {
        throw Error(ErrorCode::ParseFailure, "line " + std::to_string(line) + ": " + field +
                                                 " must be a string or an array of strings");
    }
    return out;
}

}  // namespace

void validate_item(const EvalItem& item) {
    if (text::trim(item.question).empty()) {
        throw Error(ErrorCode::EmptyQuery, "eval item '" + item.id + "' has an empty question");
    }
    if (item.gold_answers.empty() && item.gold_doc_ids.empty()) {
        throw Error(ErrorCode::ParseFailure, "eval item '" + item.id +
                                                 "' needs at least one gold answer or gold "
                                                 "doc id");
    }
}

std::vector<EvalItem> load_dataset_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read dataset " + path.string());
    }
    std::vector<EvalItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& ex) {
            throw Error(ErrorCode::ParseFailure,
                        "line " + std::to_string(line_no) + ": " + ex.what());
        }
        if (!obj.is_object()) {
            throw Error(ErrorCode::ParseFailure,
                        "line " + std::to_string(line_no) + ": expected a JSON object");
        }

        EvalItem item;
        for (const char* key : {"id", "_id", "qid"}) {
            if (obj.contains(key)) {
                const json& value = obj.at(key);
                if (value.is_string()) {
                    item.id = value.get<std::string>();
                } else if (value.is_number_integer()) {
                    item.id = std::to_string(value.get<long long>());
                }
                break;
            }
        }
        if (item.id.empty()) {
            item.id = std::to_string(line_no);
        }

        for (const char* key : {"question", "query"}) {
            if (obj.contains(key) && obj.at(key).is_string()) {
                item.question = obj.at(key).get<std::string>();
                break;
            }
        }

        for (const char* key : {"gold_answers", "answers", "answer"}) {
            if (obj.contains(key)) {
                item.gold_answers = string_list(obj.at(key), line_no, key);
                break;
            }
        }
        for (const char* key : {"gold_doc_ids", "gold_ids"}) {
            if (obj.contains(key)) {
                item.gold_doc_ids = string_list(obj.at(key), line_no, key);
                break;
            }
        }

        try {
            validate_item(item);
        } catch (const Error& err) {
            throw Error(ErrorCode::ParseFailure,
                        "line " + std::to_string(line_no) + ": " + err.what());
        }
        items.push_back(std::move(item));
    }
    if (items.empty()) {
        throw Error(ErrorCode::ParseFailure, "dataset " + path.string() + " has no items");
    }
    return items;
}

GoldLabelJudge::GoldLabelJudge(const retrieval::Bm25Index& index) {
    for (std::size_t i = 0; i < index.doc_count(); ++i) {
        const retrieval::CorpusDoc& doc = index.doc(i);
        // Same key derivation the index uses; first doc wins on collisions,
        // matching the index's own dedup rule.
        id_by_key_.emplace(document_key(doc.url, doc.text).value, doc.id);
    }
}

Judgment GoldLabelJudge::judge(const EvalItem& item, const Document& doc) {
    Judgment judgment;
    judgment.key = doc.key;
    judgment.judge = JudgeKind::GoldLabels;
    const auto it = id_by_key_.find(doc.key.value);
    if (it != id_by_key_.end()) {
        judgment.relevant = std::find(item.gold_doc_ids.begin(), item.gold_doc_ids.end(),
                                      it->second) != item.gold_doc_ids.end();
    }
    return judgment;
}

LlmJudge::LlmJudge(llm::Completer& completer, const llm::TemplateRegistry& templates)
    : completer_(&completer), templates_(&templates) {}

Judgment LlmJudge::judge(const EvalItem& item, const Document& doc) {
    llm::ChatRequest request;
    request.user = llm::render(templates_->get("judge_relevance"),
                               {{"question", item.question},
                                {"title", doc.title},
                                {"content", doc.content}});
    const llm::ChatResponse response = completer_->complete(request);

    Judgment judgment;
    judgment.key = doc.key;
    judgment.judge = JudgeKind::LlmJudge;
    judgment.relevant = parse_yes_no(response.text, &judgment.unparseable) == 1;
    if (judgment.unparseable) {
        judgment.relevant = false;
    }
    return judgment;
}

int hit_at_k(const std::vector<Judgment>& judgments) {
    for (const Judgment& judgment : judgments) {
        if (judgment.relevant) {
            return 1;
        }
    }
    return 0;
}

double precision_at_k(const std::vector<Judgment>& judgments, int k) {
    if (k < 1) {
        throw Error(ErrorCode::InvalidConfig, "precision_at_k needs k >= 1");
    }
    if (judgments.size() > static_cast<std::size_t>(k)) {
        throw Error(ErrorCode::InvalidConfig,
                    "precision_at_k got more judgments than k");
    }
    int relevant = 0;
    for (const Judgment& judgment : judgments) {
        if (judgment.relevant) {
            ++relevant;
        }
    }
    return static_cast<double>(relevant) / static_cast<double>(k);
}

std::string normalize_answer(std::string_view s) {
    static const std::string kPunct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::string stripped;
    stripped.reserve(s.size());
    for (const char ch : s) {
        if (kPunct.find(ch) != std::string::npos) {
            continue;
        }
        stripped.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(ch))));
    }

    std::string out;
    std::istringstream stream(stripped);
    std::string token;
    while (stream >> token) {
        if (token == "a" || token == "an" || token == "the") {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += token;
    }
    return out;
}

int exact_match(const std::string& pred, const std::vector<std::string>& golds) {
    const std::string normalized = normalize_answer(pred);
    for (const std::string& gold : golds) {
        if (normalized == normalize_answer(gold)) {
            return 1;
        }
    }
    return 0;
}

double f1_token(const std::string& pred, const std::vector<std::string>& golds) {
    const std::vector<std::string> pred_tokens = answer_tokens(pred);
    double best = 0.0;
    for (const std::string& gold : golds) {
        best = std::max(best, f1_single(pred_tokens, answer_tokens(gold)));
    }
    return best;
}

int grade_answer(const EvalItem& item, const std::string& answer, llm::Completer& completer,
                 const llm::TemplateRegistry& templates, bool* unparseable) {
    std::string golds;
    for (const std::string& gold : item.gold_answers) {
        if (!golds.empty()) {
            golds += "; ";
        }
        golds += gold;
    }
    llm::ChatRequest request;
    request.user = llm::render(
        templates.get("judge_answer"),
        {{"question", item.question}, {"answer", answer}, {"golds", golds}});
    const llm::ChatResponse response = completer.complete(request);

    bool bad = false;
    const int verdict = parse_yes_no(response.text, &bad);
    if (unparseable != nullptr) {
        *unparseable = bad;
    }
    return bad ? 0 : verdict;
}

MetricsReport run_experiment(const std::vector<EvalItem>& dataset,
                             const ExperimentOptions& options, const pipeline::Deps& deps,
                             RelevanceJudge& judge) {
    if (dataset.empty()) {
        throw Error(ErrorCode::InvalidConfig, "experiment needs at least one item");
    }
    if (options.parallelism < 1) {
        throw Error(ErrorCode::InvalidConfig, "eval parallelism must be at least 1");
    }
    if (options.grade_answers && (deps.completer == nullptr || deps.templates == nullptr)) {
        throw Error(ErrorCode::InvalidConfig, "answer grading needs a completer and templates");
    }

    const int k = options.pipeline.config.context_size;
    const auto eval_one = [&](const EvalItem& item) {
        RowMetrics row;
        row.id = item.id;
        try {
            validate_item(item);
            const Query query{item.question, item.id};
            const pipeline::PipelineTrace trace = pipeline::run(query, options.pipeline, deps);
            row.rewrite_count = static_cast<int>(trace.query_set.rewrites.size());

            std::vector<Judgment> judgments;
            judgments.reserve(trace.context.size());
            for (const rank::FusedDoc& fused : trace.context) {
                judgments.push_back(judge.judge(item, fused.doc));
            }
            row.h_at_k = hit_at_k(judgments);
            row.p_at_k = precision_at_k(judgments, k);
            row.em = exact_match(trace.answer.text, item.gold_answers);
            row.f1 = f1_token(trace.answer.text, item.gold_answers);
            if (options.grade_answers) {
                row.acc = grade_answer(item, trace.answer.text, *deps.completer,
                                       *deps.templates);
            }
        } catch (const Error& err) {
            row.error = err.what();
        } catch (const std::exception& ex) {
            row.error = ex.what();
        }
        return row;
    };

    std::vector<RowMetrics> rows(dataset.size());
    {
        const int bound =
            std::max(1, std::min(options.parallelism, static_cast<int>(dataset.size())));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(bound)
#endif
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(dataset.size()); ++i) {
            rows[static_cast<std::size_t>(i)] = eval_one(dataset[static_cast<std::size_t>(i)]);
        }
        (void)bound;
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RowMetrics& a, const RowMetrics& b) { return a.id < b.id; });

    MetricsReport report;
    report.method = pipeline::to_string(options.pipeline.method);
    report.config = options.pipeline.config;
    report.k = k;
    report.graded_answers = options.grade_answers;
    report.rows = std::move(rows);

    const double n = static_cast<double>(report.rows.size());
    double acc_sum = 0.0;
    for (const RowMetrics& row : report.rows) {
        report.aggregates.h_at_k += row.h_at_k / n;
        report.aggregates.p_at_k += row.p_at_k / n;
        report.aggregates.em += row.em / n;
        report.aggregates.f1 += row.f1 / n;
        report.aggregates.mean_rewrites += row.rewrite_count / n;
        acc_sum += row.acc;
        ++report.histogram[row.rewrite_count];
    }
    if (options.grade_answers) {
        report.aggregates.acc = acc_sum / n;
    }
    return report;
}

nlohmann::json report_to_json(const MetricsReport& report) {
    json rows = json::array();
    for (const RowMetrics& row : report.rows) {
        json entry{{"id", row.id},         {"h_at_k", row.h_at_k},
                   {"p_at_k", row.p_at_k}, {"em", row.em},
                   {"f1", row.f1},         {"rewrite_count", row.rewrite_count},
                   {"error", row.error}};
        if (report.graded_answers) {
            entry["acc"] = row.acc;
        }
        rows.push_back(std::move(entry));
    }

    json aggregates{{"h_at_k", report.aggregates.h_at_k},
                    {"p_at_k", report.aggregates.p_at_k},
                    {"em", report.aggregates.em},
                    {"f1", report.aggregates.f1},
                    {"mean_rewrites", report.aggregates.mean_rewrites}};
    if (report.aggregates.acc.has_value()) {
        aggregates["acc"] = *report.aggregates.acc;
    }

    json histogram = json::object();
    for (const auto& [count, items] : report.histogram) {
        histogram[std::to_string(count)] = items;
    }

    return json{{"config", json{{"method", report.method},
                                {"k", report.k},
                                {"graded_answers", report.graded_answers},
                                {"pipeline", json(report.config)}}},
                {"rows", rows},
                {"aggregates", aggregates},
                {"histogram", histogram}};
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot write report " + path.string());
        }
        out << report_to_json(report).dump(2) << "\n";
        if (!out) {
            throw Error(ErrorCode::IoError, "failed writing report " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorCode::IoError,
                    "cannot move report into place: " + ec.message());
    }
}

}  // namespace dmqr::eval
