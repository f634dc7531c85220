#pragma once

// Random debunk corpora, queries and graded judgments over a small vocabulary,
// for property tests of the retrieval pipeline.

#include <random>
#include <string>
#include <vector>

#include "xdnr/corpus.hpp"
#include "xdnr/metrics.hpp"

namespace fixture {

struct RandomCollection {
    xdnr::DebunkCorpus corpus;
    std::vector<xdnr::QueryClaim> queries;
    xdnr::Qrels qrels;
};

inline std::string random_text(std::mt19937& gen, std::size_t vocab, std::size_t min_len, std::size_t max_len) {
    std::string s;
    const std::size_t len = min_len + gen() % (max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + ("w" + std::to_string(gen() % vocab));
    return s;
}

inline RandomCollection random_collection(std::mt19937& gen, std::size_t docs, std::size_t queries,
                                          std::size_t vocab = 60) {
    std::vector<xdnr::Debunk> ds;
    for (std::size_t i = 0; i < docs; ++i)
        ds.push_back({"d" + std::to_string(i), "en", random_text(gen, vocab, 3, 12), random_text(gen, vocab, 0, 4), {}, {}});
    RandomCollection c{xdnr::DebunkCorpus(std::move(ds)), {}, {}};
    for (std::size_t i = 0; i < queries; ++i) {
        const std::string qid = "q" + std::to_string(i);
        c.queries.push_back({qid, "en", random_text(gen, vocab, 2, 6), {}, {}, true});
        const std::size_t judged = 1 + gen() % 8;
        for (std::size_t j = 0; j < judged; ++j) c.qrels.set(qid, "d" + std::to_string(gen() % docs), int(gen() % 3));
    }
    return c;
}

}  // namespace fixture
