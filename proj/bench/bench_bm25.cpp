#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "dmqr/retrieval.hpp"

// Times the parallel BM25 search kernel against the serial reference on a
// synthetic corpus and verifies that both return identical rankings.
//
//   bench_bm25 [docs] [queries] [--smoke]
//
// --smoke shrinks the workload so the binary doubles as a ctest entry.

namespace {

using namespace dmqr;
using Clock = std::chrono::steady_clock;

std::vector<std::string> make_vocab(std::mt19937& rng, std::size_t size) {
    std::vector<std::string> vocab;
    vocab.reserve(size);
    std::uniform_int_distribution<int> letter('a', 'z');
    for (std::size_t i = 0; i < size; ++i) {
        std::string word;
        for (int j = 0; j < 7; ++j) {
            word.push_back(static_cast<char>(letter(rng)));
        }
        vocab.push_back(word + std::to_string(i));
    }
    return vocab;
}

retrieval::Bm25Index build_corpus(std::mt19937& rng, const std::vector<std::string>& vocab,
                                  std::size_t doc_count) {
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::uniform_int_distribution<int> length(30, 300);

    std::vector<retrieval::CorpusDoc> docs;
    docs.reserve(doc_count);
    for (std::size_t i = 0; i < doc_count; ++i) {
        std::string body;
        const int words = length(rng);
        for (int w = 0; w < words; ++w) {
            if (w > 0) {
                body.push_back(' ');
            }
            body += vocab[pick(rng)];
        }
        docs.push_back({"doc" + std::to_string(i), "Document " + std::to_string(i),
                        std::move(body), std::nullopt});
    }
    return retrieval::Bm25Index::build(std::move(docs));
}

std::vector<std::string> make_queries(std::mt19937& rng, const std::vector<std::string>& vocab,
                                      std::size_t count) {
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::uniform_int_distribution<int> terms(2, 6);

    std::vector<std::string> queries;
    queries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::string q;
        const int n = terms(rng);
        for (int t = 0; t < n; ++t) {
            if (t > 0) {
                q.push_back(' ');
            }
            q += vocab[pick(rng)];
        }
        queries.push_back(std::move(q));
    }
    return queries;
}

template <typename Fn>
double time_ms(Fn&& fn) {
    const auto start = Clock::now();
    fn();
    const auto end = Clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count();
}

bool same_ranking(const RankedList& a, const RankedList& b) {
    if (a.docs.size() != b.docs.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        if (a.docs[i].key != b.docs[i].key || a.docs[i].retrieval_rank != b.docs[i].retrieval_rank) {
            return false;
        }
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t doc_count = 20000;
    std::size_t query_count = 200;
    bool smoke = false;

    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::size_t> positional;
    for (const std::string& arg : args) {
        if (arg == "--smoke") {
            smoke = true;
        } else {
            positional.push_back(static_cast<std::size_t>(std::strtoull(arg.c_str(), nullptr, 10)));
        }
    }
    if (positional.size() > 0) {
        doc_count = positional[0];
    }
    if (positional.size() > 1) {
        query_count = positional[1];
    }
    if (smoke) {
        doc_count = 500;
        query_count = 20;
    }

    std::mt19937 rng(20240817);
    const std::vector<std::string> vocab = make_vocab(rng, doc_count / 10 + 50);

    const retrieval::Bm25Index index = build_corpus(rng, vocab, doc_count);
    std::printf("index: %zu docs, %zu terms, avg length %.1f\n", index.doc_count(),
                index.vocab_size(), index.avg_doc_length());

    const std::vector<std::string> queries = make_queries(rng, vocab, query_count);
    constexpr int kLimit = 10;

    std::vector<RankedList> parallel(queries.size());
    std::vector<RankedList> serial(queries.size());

    // Touch the kernel once so thread-pool spin-up is not billed to the run.
    for (std::size_t i = 0; i < std::min<std::size_t>(queries.size(), 5); ++i) {
        index.search(queries[i], kLimit);
    }

    const double parallel_ms = time_ms([&] {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            parallel[i] = index.search(queries[i], kLimit);
        }
    });
    const double serial_ms = time_ms([&] {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            serial[i] = index.search_serial(queries[i], kLimit);
        }
    });

    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (!same_ranking(parallel[i], serial[i])) {
            ++mismatches;
        }
    }

    std::printf("queries:  %zu (limit %d)\n", queries.size(), kLimit);
    std::printf("parallel: %9.2f ms total, %7.3f ms/query\n", parallel_ms,
                parallel_ms / static_cast<double>(queries.size()));
    std::printf("serial:   %9.2f ms total, %7.3f ms/query\n", serial_ms,
                serial_ms / static_cast<double>(queries.size()));
    std::printf("speedup:  %.2fx\n", serial_ms / parallel_ms);
    std::printf("rankings: %s\n", mismatches == 0 ? "identical" : "MISMATCH");

    return mismatches == 0 ? 0 : 1;
}
