#include "dmqr/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dmqr/errors.hpp"
#include "dmqr/hash.hpp"
#include "dmqr/text.hpp"

namespace dmqr::retrieval {

namespace {

constexpr int kIndexFileVersion = 1;
constexpr char kFieldSep = '\x1f';
constexpr char kDocSep = '\x1e';

nlohmann::json doc_to_json(const CorpusDoc& doc) {
    nlohmann::json j = {{"id", doc.id}, {"title", doc.title}, {"text", doc.text}};
    if (doc.url) {
        j["url"] = *doc.url;
    } else {
        j["url"] = nullptr;
    }
    return j;
}

CorpusDoc doc_from_json(const nlohmann::json& j) {
    CorpusDoc doc;
    doc.id = j.value("id", "");
    doc.title = j.value("title", "");
    if (j.contains("text") && j["text"].is_string()) {
        doc.text = j["text"].get<std::string>();
    } else if (j.contains("content") && j["content"].is_string()) {
        doc.text = j["content"].get<std::string>();
    }
    if (j.contains("url") && j["url"].is_string()) {
        doc.url = j["url"].get<std::string>();
    }
    return doc;
}

}  // namespace

Bm25Index Bm25Index::build(std::vector<CorpusDoc> docs, Bm25Params params) {
    if (docs.empty()) {
        throw Error(ErrorCode::EmptyCorpus, "corpus has no documents");
    }
    if (params.k1 <= 0.0 || params.b < 0.0 || params.b > 1.0) {
        throw Error(ErrorCode::InvalidConfig, "bm25 parameters out of range");
    }

    Bm25Index index;
    index.params_ = params;
    index.docs_ = std::move(docs);

    std::unordered_set<std::string> seen_ids;
    seen_ids.reserve(index.docs_.size());
    std::uint64_t total_len = 0;

    for (std::size_t i = 0; i < index.docs_.size(); ++i) {
        const CorpusDoc& doc = index.docs_[i];
        if (doc.id.empty()) {
            throw Error(ErrorCode::ParseFailure, "corpus document without an id");
        }
        if (!seen_ids.insert(doc.id).second) {
            throw Error(ErrorCode::DuplicateDocId, "duplicate corpus doc id: " + doc.id);
        }
        if (text::trim(doc.text).empty()) {
            throw Error(ErrorCode::EmptyDocument, "corpus doc " + doc.id + " has empty text");
        }

        const auto tokens = text::tokenize(doc.text);
        index.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total_len += tokens.size();

        std::unordered_map<std::string, std::uint32_t> tf;
        for (const auto& token : tokens) {
            ++tf[token];
        }
        for (const auto& [term, count] : tf) {
            index.postings_[term].push_back({static_cast<std::uint32_t>(i), count});
        }

        index.keys_.push_back(document_key(doc.url, doc.text));
    }

    if (total_len == 0) {
        throw Error(ErrorCode::EmptyCorpus, "corpus contains no indexable tokens");
    }
    index.avg_len_ = static_cast<double>(total_len) / static_cast<double>(index.docs_.size());

    // Postings were appended in ascending doc order; keep that sorted
    // property explicit for the binary search in score().
    for (auto& [term, postings] : index.postings_) {
        std::sort(postings.begin(), postings.end(),
                  [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
    }

    std::ostringstream fp;
    fp << params.k1 << kFieldSep << params.b << kDocSep;
    for (const auto& doc : index.docs_) {
        fp << doc.id << kFieldSep << doc.title << kFieldSep << doc.text << kFieldSep
           << doc.url.value_or("") << kDocSep;
    }
    index.fingerprint_ = hash::sha256_hex(fp.str());
    return index;
}

Bm25Index Bm25Index::build_from_jsonl(const std::filesystem::path& path, Bm25Params params) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read corpus file " + path.string());
    }
    std::vector<CorpusDoc> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseFailure, path.string() + " line " +
                                                     std::to_string(line_no) + ": " + e.what());
        }
        CorpusDoc doc = doc_from_json(j);
        if (doc.id.empty()) {
            throw Error(ErrorCode::ParseFailure,
                        path.string() + " line " + std::to_string(line_no) + ": missing doc id");
        }
        if (text::trim(doc.text).empty()) {
            throw Error(ErrorCode::ParseFailure, path.string() + " line " +
                                                     std::to_string(line_no) +
                                                     ": document text is empty");
        }
        docs.push_back(std::move(doc));
    }
    return build(std::move(docs), params);
}

void Bm25Index::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["version"] = kIndexFileVersion;
    j["k1"] = params_.k1;
    j["b"] = params_.b;
    j["docs"] = nlohmann::json::array();
    for (const auto& doc : docs_) {
        j["docs"].push_back(doc_to_json(doc));
    }

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot write index file " + path.string());
        }
        out << j.dump(2) << '\n';
        if (!out.good()) {
            throw Error(ErrorCode::IoError, "short write to index file " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorCode::IoError,
                    "cannot move index into place: " + ec.message());
    }
}

Bm25Index Bm25Index::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::IndexMissing, "no index at " + path.string());
    }
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read index file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError, "index file " + path.string() + ": " + e.what());
    }
    if (j.value("version", 0) != kIndexFileVersion) {
        throw Error(ErrorCode::IoError, "unsupported index file version in " + path.string());
    }
    Bm25Params params;
    params.k1 = j.value("k1", params.k1);
    params.b = j.value("b", params.b);
    std::vector<CorpusDoc> docs;
    for (const auto& entry : j.value("docs", nlohmann::json::array())) {
        docs.push_back(doc_from_json(entry));
    }
    return build(std::move(docs), params);
}

double Bm25Index::score(const std::vector<std::string>& query_terms,
                        std::size_t doc_index) const {
    const double len = static_cast<double>(lengths_.at(doc_index));
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * len / avg_len_);
    const double n_docs = static_cast<double>(docs_.size());

    double total = 0.0;
    for (const auto& term : query_terms) {
        const auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const auto& postings = it->second;
        const auto pos = std::lower_bound(
            postings.begin(), postings.end(), static_cast<std::uint32_t>(doc_index),
            [](const Posting& p, std::uint32_t doc) { return p.doc < doc; });
        if (pos == postings.end() || pos->doc != doc_index) {
            continue;
        }
        const double tf = static_cast<double>(pos->tf);
        const double df = static_cast<double>(postings.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        total += idf * (tf * (params_.k1 + 1.0)) / (tf + norm);
    }
    return total;
}

RankedList Bm25Index::ranked_from_scores(
    const std::string& query_text, const std::vector<std::pair<std::size_t, double>>& scored,
    int limit) const {
    std::vector<std::pair<std::size_t, double>> order = scored;
    std::sort(order.begin(), order.end(),
              [this](const auto& a, const auto& b) {
                  if (a.second != b.second) {
                      return a.second > b.second;
                  }
                  return docs_[a.first].id < docs_[b.first].id;
              });

    RankedList list;
    list.query = query_text;
    std::unordered_set<std::string> seen_keys;
    for (const auto& [doc_idx, score] : order) {
        if (static_cast<int>(list.docs.size()) >= limit) {
            break;
        }
        if (!seen_keys.insert(keys_[doc_idx].value).second) {
            continue;
        }
        Document d;
        d.key = keys_[doc_idx];
        d.title = docs_[doc_idx].title;
        d.content = docs_[doc_idx].text;
        d.url = docs_[doc_idx].url;
        d.retrieval_rank = static_cast<int>(list.docs.size()) + 1;
        list.docs.push_back(std::move(d));
    }
    validate_ranked_list(list);
    return list;
}

RankedList Bm25Index::search(const std::string& query_text, int limit) const {
    if (limit < 1) {
        throw Error(ErrorCode::InvalidConfig, "search limit must be at least 1");
    }
    const auto terms = text::tokenize(query_text);

    // Candidate set: every document containing at least one query term.
    // With the +1 idf every contribution is positive, so this is exactly
    // the set of nonzero-score documents.
    std::vector<char> is_candidate(docs_.size(), 0);
    for (const auto& term : terms) {
        const auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        for (const auto& posting : it->second) {
            is_candidate[posting.doc] = 1;
        }
    }
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (is_candidate[i]) {
            candidates.push_back(i);
        }
    }

    std::vector<double> scores(candidates.size(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(candidates.size()); ++i) {
        scores[static_cast<std::size_t>(i)] =
            score(terms, candidates[static_cast<std::size_t>(i)]);
    }

    std::vector<std::pair<std::size_t, double>> scored;
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (scores[i] > 0.0) {
            scored.emplace_back(candidates[i], scores[i]);
        }
    }
    return ranked_from_scores(query_text, scored, limit);
}

RankedList Bm25Index::search_serial(const std::string& query_text, int limit) const {
    if (limit < 1) {
        throw Error(ErrorCode::InvalidConfig, "search limit must be at least 1");
    }
    const auto terms = text::tokenize(query_text);
    std::vector<std::pair<std::size_t, double>> scored;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const double s = score(terms, i);
        if (s > 0.0) {
            scored.emplace_back(i, s);
        }
    }
    return ranked_from_scores(query_text, scored, limit);
}

LocalRetriever::LocalRetriever(std::shared_ptr<const Bm25Index> index)
    : index_(std::move(index)) {
    if (!index_) {
        throw Error(ErrorCode::IndexMissing, "local retriever needs a built index");
    }
}

LocalRetriever LocalRetriever::open(const std::filesystem::path& index_path) {
    return LocalRetriever(std::make_shared<const Bm25Index>(Bm25Index::load(index_path)));
}

RankedList LocalRetriever::search(const std::string& query_text, int limit) {
    return index_->search(query_text, limit);
}

std::string LocalRetriever::id() const { return "local:" + index_->fingerprint(); }

RemoteRetriever::RemoteRetriever(RemoteSearchConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) {
        throw Error(ErrorCode::InvalidConfig, "remote search url is not configured");
    }
}

std::string RemoteRetriever::id() const { return "remote:" + config_.url; }

namespace {

struct SplitUrl {
    std::string origin;
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const std::size_t path_begin =
        url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_begin == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace

RankedList RemoteRetriever::search(const std::string& query_text, int limit) {
    if (limit < 1) {
        throw Error(ErrorCode::InvalidConfig, "search limit must be at least 1");
    }
    const nlohmann::json body = {{"query", query_text}, {"limit", limit}};
    const std::string payload = body.dump();
    const auto [origin, path] = split_url(config_.url);

    std::string last_error = "transport failure";
    int last_retry_after = 0;
    ErrorCode last_code = ErrorCode::Transport;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_base_ms * (1 << (attempt - 1))));
        }

        httplib::Client client(origin);
        client.set_connection_timeout(config_.timeout_ms / 1000,
                                      (config_.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!config_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        }

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_code = ErrorCode::Transport;
            last_error = "search transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw Error(ErrorCode::Auth,
                        "search provider returned HTTP " + std::to_string(res->status));
        }
        if (res->status == 429) {
            last_code = ErrorCode::RateLimited;
            last_error = "search provider rate limit";
            if (res->has_header("Retry-After")) {
                last_retry_after = std::atoi(res->get_header_value("Retry-After").c_str());
            }
            continue;
        }
        if (res->status >= 500) {
            last_code = ErrorCode::Transport;
            last_error = "search provider returned HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(ErrorCode::ProtocolError,
                        "unexpected search HTTP status " + std::to_string(res->status));
        }

        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ProtocolError,
                        std::string("unparseable search body: ") + e.what());
        }
        if (!parsed.contains("results") || !parsed["results"].is_array()) {
            throw Error(ErrorCode::ProtocolError, "search body carries no results array");
        }

        RankedList list;
        list.query = query_text;
        std::unordered_set<std::string> seen_keys;
        for (const auto& entry : parsed["results"]) {
            if (static_cast<int>(list.docs.size()) >= limit) {
                break;
            }
            if (!entry.is_object()) {
                continue;
            }
            Document d;
            d.title = entry.value("name", entry.value("title", ""));
            d.content = entry.value("snippet", entry.value("content", ""));
            if (entry.contains("url") && entry["url"].is_string() &&
                !entry["url"].get<std::string>().empty()) {
                d.url = entry["url"].get<std::string>();
            }
            try {
                d.key = document_key(d.url, d.content);
            } catch (const Error&) {
                continue;  // neither url nor content, nothing to key on
            }
            if (!seen_keys.insert(d.key.value).second) {
                continue;
            }
            d.retrieval_rank = static_cast<int>(list.docs.size()) + 1;
            list.docs.push_back(std::move(d));
        }
        validate_ranked_list(list);
        return list;
    }

    Error err(last_code,
              last_error + " after " + std::to_string(config_.max_retries) + " retries");
    err.set_retry_after_s(last_retry_after);
    throw err;
}

SearchCache::SearchCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    // A failure here is not fatal: every read misses and every write is
    // dropped, which is the documented pass-through degradation.
}

std::string SearchCache::key_for(const std::string& retriever_id, const std::string& query_text,
                                 int limit) {
    std::string material = retriever_id;
    material += kFieldSep;
    material += query_text;
    material += kFieldSep;
    material += std::to_string(limit);
    return hash::sha256_hex(material);
}

std::filesystem::path SearchCache::entry_path(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
}

RankedList SearchCache::cached_search(Retriever& retriever, const std::string& query_text,
                                      int limit, bool* hit) {
    const std::string key = key_for(retriever.id(), query_text, limit);
    const std::filesystem::path path = entry_path(key);

    {
        std::ifstream in(path);
        if (in) {
            try {
                nlohmann::json j;
                in >> j;
                RankedList payload = j.at("payload").get<RankedList>();
                validate_ranked_list(payload);
                hits_.fetch_add(1);
                if (hit) {
                    *hit = true;
                }
                return payload;
            } catch (const std::exception&) {
                // Corrupt entry: fall through to the retriever.
            }
        }
    }

    misses_.fetch_add(1);
    if (hit) {
        *hit = false;
    }
    RankedList result = retriever.search(query_text, limit);

    nlohmann::json entry;
    entry["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
    entry["retriever_id"] = retriever.id();
    entry["query"] = query_text;
    entry["limit"] = limit;
    entry["payload"] = result;

    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (!ec) {
        static std::atomic<std::uint64_t> temp_counter{0};
        const std::filesystem::path tmp =
            path.string() + ".tmp" + std::to_string(temp_counter.fetch_add(1));
        std::ofstream out(tmp);
        if (out) {
            out << entry.dump() << '\n';
            out.close();
            if (out.good()) {
                std::filesystem::rename(tmp, path, ec);
            }
            if (ec || !out.good()) {
                std::filesystem::remove(tmp, ec);
            }
        }
    }
    return result;
}

SearchCache::DiskStats SearchCache::disk_stats() const {
    DiskStats stats;
    std::error_code ec;
    std::filesystem::recursive_directory_iterator it(dir_, ec), end;
    if (ec) {
        return stats;
    }
    for (; it != end; it.increment(ec)) {
        if (ec) {
            break;
        }
        if (it->is_regular_file(ec) && it->path().extension() == ".json") {
            ++stats.entries;
            stats.bytes += it->file_size(ec);
        }
    }
    return stats;
}

std::size_t SearchCache::clear() {
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    std::filesystem::recursive_directory_iterator it(dir_, ec), end;
    if (ec) {
        return 0;
    }
    for (; it != end; it.increment(ec)) {
        if (ec) {
            break;
        }
        if (it->is_regular_file(ec) && it->path().extension() == ".json") {
            files.push_back(it->path());
        }
    }
    std::size_t removed = 0;
    for (const auto& file : files) {
        if (std::filesystem::remove(file, ec)) {
            ++removed;
        }
    }
    return removed;
}

}  // namespace dmqr::retrieval
