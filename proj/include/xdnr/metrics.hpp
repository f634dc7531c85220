#pragma once

// Graded-relevance ranking metrics: MRR, DCG@K and nDCG@K with gain 2^rel - 1
// and discount log2(rank + 1).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "xdnr/corpus.hpp"
#include "xdnr/detail/io.hpp"
#include "xdnr/error.hpp"
#include "xdnr/ranked_list.hpp"

namespace xdnr {

struct GainMap {
    int exact = 2;
    int partial = 1;
    int irrelevant = 0;

    int operator()(RelevanceLevel level) const {
        switch (level) {
            case RelevanceLevel::Exact: return exact;
            case RelevanceLevel::Partial: return partial;
            case RelevanceLevel::Irrelevant: return irrelevant;
        }
        return 0;
    }
};

/// (query, debunk) -> integer gain; unjudged pairs have gain 0.
class Qrels {
public:
    Qrels() = default;

    explicit Qrels(const JudgmentSet& judgments, const GainMap& gains = {}) {
        for (const auto& j : judgments) set(j.query_id, j.debunk_id, gains(j.level));
    }

    /// Reads qrels JSONL without resolving ids against corpora.
    static Qrels load(const std::filesystem::path& path, const GainMap& gains = {}) {
        Qrels q;
        std::set<std::pair<std::string, std::string>> seen;
        detail::for_each_jsonl(path, [&](const detail::json& obj, std::size_t line_no) {
            const auto loc = detail::where(path.string(), line_no);
            auto qid = detail::get_string(obj, "query_id", loc);
            auto did = detail::get_string(obj, "debunk_id", loc);
            const auto level = detail::get_string(obj, "level", loc);
            auto parsed = parse_level(level);
            if (!parsed) throw DataError(loc + ": unknown judgment level \"" + level + "\"");
            if (!seen.emplace(qid, did).second) throw DataError(loc + ": duplicate judgment");
            q.set(qid, did, gains(*parsed));
        });
        return q;
    }

    void set(const std::string& query_id, const std::string& debunk_id, int gain) {
        if (gain < 0) throw UsageError("gains must be nonnegative");
        by_query_[query_id][debunk_id] = gain;
    }

    int gain(const std::string& query_id, const std::string& debunk_id) const {
        auto q = by_query_.find(query_id);
        if (q == by_query_.end()) return 0;
        auto d = q->second.find(debunk_id);
        return d == q->second.end() ? 0 : d->second;
    }

    const std::unordered_map<std::string, int>* judged(const std::string& query_id) const {
        auto q = by_query_.find(query_id);
        return q == by_query_.end() ? nullptr : &q->second;
    }

    std::size_t query_count() const { return by_query_.size(); }

private:
    std::unordered_map<std::string, std::unordered_map<std::string, int>> by_query_;
};

namespace detail {

inline double gain_value(int rel) { return std::exp2(static_cast<double>(rel)) - 1.0; }

inline double discount(std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); }

inline void reject_duplicate_queries(const std::vector<RankedList>& results) {
    std::set<std::string> seen;
    for (const auto& r : results)
        if (!seen.insert(r.query_id).second) throw DataError("duplicate query id \"" + r.query_id + "\" in results");
}

}  // namespace detail

/// 1 / rank of the first entry with gain > 0, or 0 when none.
inline double reciprocal_rank(const RankedList& list, const Qrels& qrels) {
    for (std::size_t i = 0; i < list.entries.size(); ++i)
        if (qrels.gain(list.query_id, list.entries[i].id) > 0) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

inline double query_dcg(const RankedList& list, const Qrels& qrels, std::size_t k) {
    double dcg = 0.0;
    const auto n = std::min(k, list.entries.size());
    for (std::size_t i = 0; i < n; ++i)
        dcg += detail::gain_value(qrels.gain(list.query_id, list.entries[i].id)) / detail::discount(i + 1);
    return dcg;
}

/// DCG of the judged gains of `query_id` sorted descending, truncated at k.
inline double ideal_dcg(const std::string& query_id, const Qrels& qrels, std::size_t k) {
    const auto* judged = qrels.judged(query_id);
    if (!judged) return 0.0;
    std::vector<int> gains;
    gains.reserve(judged->size());
    for (const auto& [_, g] : *judged) gains.push_back(g);
    std::sort(gains.begin(), gains.end(), std::greater<>());
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, gains.size()); ++i) dcg += detail::gain_value(gains[i]) / detail::discount(i + 1);
    return dcg;
}

/// Per-query nDCG@k; 0 when the ideal DCG is 0.
inline double query_ndcg(const RankedList& list, const Qrels& qrels, std::size_t k) {
    const double ideal = ideal_dcg(list.query_id, qrels, k);
    if (ideal <= 0.0) return 0.0;
    return std::min(1.0, query_dcg(list, qrels, k) / ideal);
}

inline double mrr(const std::vector<RankedList>& results, const Qrels& qrels) {
    detail::reject_duplicate_queries(results);
    if (results.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : results) sum += reciprocal_rank(r, qrels);
    return sum / static_cast<double>(results.size());
}

inline double dcg_at_k(const std::vector<RankedList>& results, const Qrels& qrels, std::size_t k) {
    if (k < 1) throw UsageError("K must be >= 1");
    if (results.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : results) sum += query_dcg(r, qrels, k);
    return sum / static_cast<double>(results.size());
}

inline double ndcg_at_k(const std::vector<RankedList>& results, const Qrels& qrels, std::size_t k) {
    if (k < 1) throw UsageError("K must be >= 1");
    if (results.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : results) sum += query_ndcg(r, qrels, k);
    return sum / static_cast<double>(results.size());
}

struct MetricRow {
    std::size_t queries = 0;
    double mrr = 0.0;
    double ndcg1 = 0.0;
    double ndcg5 = 0.0;
};

struct QueryMetrics {
    std::string query_id;
    std::string lang;
    double reciprocal_rank = 0.0;
    double ndcg1 = 0.0;
    double ndcg5 = 0.0;
};

struct EvalReport {
    std::vector<QueryMetrics> per_query;
    MetricRow overall;
    std::map<std::string, MetricRow> by_language;
};

/// Corpus-level and per-language MRR, nDCG@1, nDCG@5. Queries without a language
/// mapping are grouped under "unknown".
inline EvalReport evaluate(const std::vector<RankedList>& results, const Qrels& qrels,
                           const std::unordered_map<std::string, std::string>& languages = {}) {
    detail::reject_duplicate_queries(results);
    EvalReport report;
    std::map<std::string, std::vector<const QueryMetrics*>> groups;
    report.per_query.reserve(results.size());
    for (const auto& r : results) {
        QueryMetrics m;
        m.query_id = r.query_id;
        auto it = languages.find(r.query_id);
        m.lang = it == languages.end() ? "unknown" : it->second;
        m.reciprocal_rank = reciprocal_rank(r, qrels);
        m.ndcg1 = query_ndcg(r, qrels, 1);
        m.ndcg5 = query_ndcg(r, qrels, 5);
        report.per_query.push_back(std::move(m));
    }
    auto summarize = [](const auto& rows) {
        MetricRow row;
        row.queries = rows.size();
        if (rows.empty()) return row;
        for (const QueryMetrics* m : rows) {
            row.mrr += m->reciprocal_rank;
            row.ndcg1 += m->ndcg1;
            row.ndcg5 += m->ndcg5;
        }
        const auto n = static_cast<double>(rows.size());
        row.mrr /= n;
        row.ndcg1 /= n;
        row.ndcg5 /= n;
        return row;
    };
    std::vector<const QueryMetrics*> all;
    for (const auto& m : report.per_query) {
        all.push_back(&m);
        groups[m.lang].push_back(&m);
    }
    report.overall = summarize(all);
    for (const auto& [lang, rows] : groups) report.by_language[lang] = summarize(rows);
    return report;
}

inline detail::json to_json(const MetricRow& row) {
    return {{"queries", row.queries}, {"mrr", row.mrr}, {"ndcg@1", row.ndcg1}, {"ndcg@5", row.ndcg5}};
}

inline detail::json to_json(const EvalReport& report) {
    detail::json out = to_json(report.overall);
    detail::json langs = detail::json::object();
    for (const auto& [lang, row] : report.by_language) langs[lang] = to_json(row);
    out["by_language"] = std::move(langs);
    detail::json per_query = detail::json::array();
    for (const auto& m : report.per_query)
        per_query.push_back({{"query_id", m.query_id},
                             {"lang", m.lang},
                             {"rr", m.reciprocal_rank},
                             {"ndcg@1", m.ndcg1},
                             {"ndcg@5", m.ndcg5}});
    out["per_query"] = std::move(per_query);
    return out;
}

/// Aligned text table: one row per language, then the overall row.
inline std::string to_table(const EvalReport& report) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "lang", "queries", "nDCG@1", "nDCG@5", "MRR");
    out << line;
    auto emit = [&](const std::string& name, const MetricRow& row) {
        std::snprintf(line, sizeof line, "%-10s %8zu %8.3f %8.3f %8.3f\n", name.c_str(), row.queries, row.ndcg1,
                      row.ndcg5, row.mrr);
        out << line;
    };
    for (const auto& [lang, row] : report.by_language) emit(lang, row);
    emit("all", report.overall);
    return out.str();
}

}  // namespace xdnr
