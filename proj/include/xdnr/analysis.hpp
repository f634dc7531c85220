#pragma once

// Dataset diagnostics: claim-matching candidate generation, corpus domain
// overlap, inter-annotator agreement, debunk/tweet time gaps and a retrieval
// latency harness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "xdnr/corpus.hpp"
#include "xdnr/dense_index.hpp"
#include "xdnr/detail/io.hpp"
#include "xdnr/error.hpp"
#include "xdnr/lexical_index.hpp"
#include "xdnr/metrics.hpp"
#include "xdnr/ranked_list.hpp"

namespace xdnr {

// ---------------------------------------------------------------------------
// Candidate pairs for relevance annotation

struct CandidatePair {
    std::string source;
    std::string target;
    double similarity;

    friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

/// For every claim, its `depth` nearest neighbours by cosine (itself excluded,
/// ties to the smaller id), kept when similarity > threshold. Output is ordered
/// by source id, then descending similarity, then target id. Zero-norm rows
/// neither query nor match.
inline std::vector<CandidatePair> candidate_pairs(const EmbeddingMatrix& claims, std::size_t depth = 7,
                                                  double threshold = 0.6) {
    if (claims.rows() < 2) throw UsageError("candidate_pairs needs at least two claims");
    const DenseIndex index(claims);
    std::vector<CandidatePair> out;
    std::vector<ScoredDoc> sims;
    for (std::size_t i = 0; i < claims.rows(); ++i) {
        const double ni = index.norms()[i];
        if (ni == 0.0) continue;
        sims.clear();
        for (std::size_t j = 0; j < claims.rows(); ++j) {
            if (j == i || index.norms()[j] == 0.0) continue;
            const double c = std::clamp(dot(claims.row(i), claims.row(j)) / (ni * index.norms()[j]), -1.0, 1.0);
            sims.push_back({claims.ids()[j], c});
        }
        const auto k = std::min(depth, sims.size());
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), ranks_before);
        for (std::size_t r = 0; r < k; ++r)
            if (sims[r].score > threshold) out.push_back({claims.ids()[i], sims[r].id, sims[r].score});
    }
    std::sort(out.begin(), out.end(), [](const CandidatePair& a, const CandidatePair& b) {
        if (a.source != b.source) return a.source < b.source;
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.target < b.target;
    });
    return out;
}

inline void write_candidate_pairs(std::ostream& out, const std::vector<CandidatePair>& pairs) {
    for (const auto& p : pairs)
        out << detail::json{{"source", p.source}, {"target", p.target}, {"sim", p.similarity}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Domain overlap

using TermWeights = std::unordered_map<std::string, double>;

/// sum_t min(x_t, y_t) / sum_t max(x_t, y_t) over the union of supports.
inline double weighted_jaccard(const TermWeights& x, const TermWeights& y) {
    double num = 0.0, den = 0.0;
    for (const auto& [term, wx] : x) {
        if (wx < 0.0) throw UsageError("weighted_jaccard: negative weight for \"" + term + "\"");
        auto it = y.find(term);
        const double wy = it == y.end() ? 0.0 : it->second;
        num += std::min(wx, wy);
        den += std::max(wx, wy);
    }
    for (const auto& [term, wy] : y) {
        if (wy < 0.0) throw UsageError("weighted_jaccard: negative weight for \"" + term + "\"");
        if (!x.contains(term)) den += wy;
    }
    if (den == 0.0) throw UsageError("weighted_jaccard: both weight vectors are zero");
    return num / den;
}

/// Relative term frequencies of the tokenized texts (weights sum to 1).
inline TermWeights relative_term_frequencies(const std::vector<std::string>& texts) {
    TermWeights w;
    double total = 0.0;
    for (const auto& t : texts)
        for (auto& term : tokenize(t)) {
            w[std::move(term)] += 1.0;
            total += 1.0;
        }
    if (total > 0.0)
        for (auto& [_, v] : w) v /= total;
    return w;
}

inline double domain_overlap(const std::vector<std::string>& test_texts, const std::vector<std::string>& train_texts) {
    if (test_texts.empty() || train_texts.empty()) throw UsageError("domain_overlap needs two nonempty corpora");
    const auto a = relative_term_frequencies(test_texts);
    const auto b = relative_term_frequencies(train_texts);
    if (a.empty() && b.empty()) throw DataError("domain_overlap: neither corpus has any tokens");
    return weighted_jaccard(a, b);
}

// ---------------------------------------------------------------------------
// Fleiss kappa

/// kappa = (P - Pe) / (1 - Pe) for an items x categories count table where
/// every row sums to `raters`. Perfect agreement on a single category yields 1.
inline double fleiss_kappa(const std::vector<std::vector<long>>& table, long raters) {
    if (raters < 2) throw UsageError("fleiss_kappa needs at least two raters per item");
    if (table.empty()) throw UsageError("fleiss_kappa needs at least one item");
    const std::size_t cats = table.front().size();
    if (cats == 0) throw UsageError("fleiss_kappa needs at least one category");
    const auto n = static_cast<double>(raters);
    const auto items = static_cast<double>(table.size());
    std::vector<double> col(cats, 0.0);
    double p_bar = 0.0;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& row = table[i];
        if (row.size() != cats) throw DataError("fleiss_kappa: row " + std::to_string(i) + " has wrong width");
        long sum = 0;
        double sq = 0.0;
        for (std::size_t j = 0; j < cats; ++j) {
            if (row[j] < 0) throw DataError("fleiss_kappa: negative count in row " + std::to_string(i));
            sum += row[j];
            sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            col[j] += static_cast<double>(row[j]);
        }
        if (sum != raters)
            throw DataError("fleiss_kappa: row " + std::to_string(i) + " sums to " + std::to_string(sum) + ", expected " +
                            std::to_string(raters));
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    double p_e = 0.0;
    for (double c : col) {
        const double p = c / (items * n);
        p_e += p * p;
    }
    if (1.0 - p_e == 0.0) {
        if (p_bar == 1.0) return 1.0;
        throw DataError("fleiss_kappa undefined: expected agreement is 1 but observed agreement is not");
    }
    return (p_bar - p_e) / (1.0 - p_e);
}

struct KappaTable {
    std::vector<std::string> item_ids;
    std::vector<std::string> categories;
    std::vector<std::vector<long>> counts;
};

/// CSV with header `item_id,cat_1,...,cat_n` and integer counts; no quoting.
inline KappaTable read_kappa_csv(std::istream& in, const std::string& source) {
    auto split_line = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        return cells;
    };
    KappaTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (t.categories.empty()) {
            if (cells.size() < 2 || cells[0] != "item_id")
                throw DataError(source + ": header must be item_id,<category>...");
            t.categories.assign(cells.begin() + 1, cells.end());
            continue;
        }
        if (cells.size() != t.categories.size() + 1)
            throw DataError(detail::where(source, line_no) + ": expected " + std::to_string(t.categories.size() + 1) +
                            " columns");
        t.item_ids.push_back(cells[0]);
        std::vector<long> row;
        for (std::size_t j = 1; j < cells.size(); ++j) {
            try {
                std::size_t used = 0;
                row.push_back(std::stol(cells[j], &used));
                if (used != cells[j].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw DataError(detail::where(source, line_no) + ": non-integer count \"" + cells[j] + "\"");
            }
        }
        t.counts.push_back(std::move(row));
    }
    if (t.categories.empty()) throw DataError(source + ": missing header");
    return t;
}

// ---------------------------------------------------------------------------
// Time gaps between debunk publication and query tweets

struct GapHistogramBin {
    long start_days;
    std::size_t count;
};

struct TimeGapStats {
    double median_days = 0.0;
    double fraction_debunk_first = 0.0;
    std::size_t dated_pairs = 0;
    std::size_t debunk_first_pairs = 0;
    std::size_t undated_pairs = 0;
    long bin_days = 30;
    std::vector<GapHistogramBin> histogram;
};

/// Gap = query date - debunk date, in days, over Exact/Partial pairs with both
/// dates. A debunk counts as first when the gap is >= 0; the median and the
/// histogram are taken over those pairs only.
inline TimeGapStats time_gap_stats(const JudgmentSet& judgments, const QuerySet& queries, const DebunkCorpus& debunks,
                                   long bin_days = 30) {
    if (bin_days < 1) throw UsageError("bin width must be >= 1 day");
    TimeGapStats out;
    out.bin_days = bin_days;
    std::vector<long> gaps;
    for (const auto& j : judgments) {
        if (!is_positive(j.level)) continue;
        const auto& q = queries.at(j.query_id);
        const auto& d = debunks.at(j.debunk_id);
        if (!q.created_at || !d.published_at) {
            ++out.undated_pairs;
            continue;
        }
        ++out.dated_pairs;
        const long gap = (*q.created_at - *d.published_at).count();
        if (gap >= 0) gaps.push_back(gap);
    }
    if (out.dated_pairs == 0) throw DataError("no dated positive pairs");
    out.debunk_first_pairs = gaps.size();
    out.fraction_debunk_first = static_cast<double>(gaps.size()) / static_cast<double>(out.dated_pairs);
    if (!gaps.empty()) {
        std::sort(gaps.begin(), gaps.end());
        const auto m = gaps.size() / 2;
        out.median_days = gaps.size() % 2 ? static_cast<double>(gaps[m]) : 0.5 * static_cast<double>(gaps[m - 1] + gaps[m]);
        std::map<long, std::size_t> bins;
        for (long g : gaps) ++bins[(g / bin_days) * bin_days];
        for (const auto& [start, count] : bins) out.histogram.push_back({start, count});
    }
    return out;
}

inline detail::json to_json(const TimeGapStats& s) {
    detail::json hist = detail::json::array();
    for (const auto& b : s.histogram) hist.push_back({{"start_days", b.start_days}, {"count", b.count}});
    return {{"median_days", s.median_days},       {"fraction_debunk_first", s.fraction_debunk_first},
            {"dated_pairs", s.dated_pairs},       {"debunk_first_pairs", s.debunk_first_pairs},
            {"undated_pairs", s.undated_pairs},   {"bin_days", s.bin_days},
            {"histogram", std::move(hist)}};
}

// ---------------------------------------------------------------------------
// Latency benchmark

struct LatencyReport {
    std::string model_tag;
    std::vector<double> samples;  // seconds, ascending
    double p50 = 0.0;
    double p90 = 0.0;
    double mean = 0.0;
    std::optional<double> mrr;
};

/// Nearest-rank percentile of an ascending sample.
inline double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

template <typename Pipeline>
concept QueryPipeline = std::invocable<Pipeline&, const QueryClaim&> &&
                        std::convertible_to<std::invoke_result_t<Pipeline&, const QueryClaim&>, RankedList>;

/// Times `run(query)` per query on the calling thread. `warmup` full passes are
/// discarded, then `repeats` passes are timed; MRR is taken from the last pass.
template <QueryPipeline Pipeline>
LatencyReport latency_bench(std::string model_tag, Pipeline&& run, const std::vector<QueryClaim>& queries,
                            std::size_t warmup, std::size_t repeats, const Qrels* qrels = nullptr) {
    if (repeats < 1) throw UsageError("repeats must be >= 1");
    LatencyReport report;
    report.model_tag = std::move(model_tag);
    for (std::size_t w = 0; w < warmup; ++w)
        for (const auto& q : queries) (void)run(q);
    std::vector<RankedList> last(queries.size());
    report.samples.reserve(queries.size() * repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            RankedList result = run(queries[i]);
            const auto t1 = std::chrono::steady_clock::now();
            report.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
            last[i] = std::move(result);
        }
    }
    std::sort(report.samples.begin(), report.samples.end());
    report.p50 = percentile(report.samples, 0.5);
    report.p90 = percentile(report.samples, 0.9);
    double sum = 0.0;
    for (double s : report.samples) sum += s;
    report.mean = report.samples.empty() ? 0.0 : sum / static_cast<double>(report.samples.size());
    if (qrels) {
        for (std::size_t i = 0; i < queries.size(); ++i) last[i].query_id = queries[i].id;
        report.mrr = mrr(last, *qrels);
    }
    return report;
}

inline detail::json to_json(const LatencyReport& r) {
    detail::json out = {{"model_tag", r.model_tag}, {"sample_size", r.samples.size()}, {"p50", r.p50},
                        {"p90", r.p90},             {"mean", r.mean},                  {"samples", r.samples}};
    out["mrr"] = r.mrr ? detail::json(*r.mrr) : detail::json(nullptr);
    return out;
}

}  // namespace xdnr
