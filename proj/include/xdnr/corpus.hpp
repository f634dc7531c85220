#pragma once

// Data model for debunks, query claims and graded judgments; JSONL loading,
// train/validation/test splitting and training-pair construction.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xdnr/detail/io.hpp"
#include "xdnr/detail/random.hpp"
#include "xdnr/error.hpp"

namespace xdnr {

struct Debunk {
    std::string id;
    std::string lang;
    std::string claim;
    std::string title;
    std::optional<std::chrono::sys_days> published_at;
    std::optional<std::string> source_org;
};

struct QueryClaim {
    std::string id;
    std::string lang;
    std::string text;
    std::optional<std::string> text_en;
    std::optional<std::chrono::sys_days> created_at;
    // Non-textual (image/video) misinformation is kept in the corpus but not split.
    bool textual = true;
};

enum class RelevanceLevel { Exact, Partial, Irrelevant };

inline const char* to_string(RelevanceLevel level) {
    switch (level) {
        case RelevanceLevel::Exact: return "exact";
        case RelevanceLevel::Partial: return "partial";
        case RelevanceLevel::Irrelevant: return "irrelevant";
    }
    return "?";
}

inline std::optional<RelevanceLevel> parse_level(std::string_view s) {
    if (s == "exact") return RelevanceLevel::Exact;
    if (s == "partial") return RelevanceLevel::Partial;
    if (s == "irrelevant") return RelevanceLevel::Irrelevant;
    return std::nullopt;
}

inline bool is_positive(RelevanceLevel level) { return level != RelevanceLevel::Irrelevant; }

struct RelevanceJudgment {
    std::string query_id;
    std::string debunk_id;
    RelevanceLevel level;
};

/// Retrieval text of a debunk: claim and title joined by one space.
inline std::string doc_text(const Debunk& d) {
    if (d.title.empty()) return d.claim;
    if (d.claim.empty()) return d.title;
    return d.claim + " " + d.title;
}

inline bool is_lang_code(std::string_view s) {
    return s.size() == 2 && s[0] >= 'a' && s[0] <= 'z' && s[1] >= 'a' && s[1] <= 'z';
}

/// Ordered collection with unique ids. Immutable after construction.
template <typename Record>
class IdCollection {
public:
    IdCollection() = default;

    explicit IdCollection(std::vector<Record> records) : records_(std::move(records)) {
        index_.reserve(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) {
            if (!index_.emplace(records_[i].id, i).second)
                throw DataError("duplicate id \"" + records_[i].id + "\"");
        }
    }

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const Record& operator[](std::size_t i) const { return records_[i]; }
    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }
    const std::vector<Record>& records() const { return records_; }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    bool contains(const std::string& id) const { return index_.contains(id); }

    const Record& at(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("unknown id \"" + id + "\"");
        return records_[it->second];
    }

private:
    std::vector<Record> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

using DebunkCorpus = IdCollection<Debunk>;
using QuerySet = IdCollection<QueryClaim>;

class JudgmentSet {
public:
    JudgmentSet() = default;

    explicit JudgmentSet(std::vector<RelevanceJudgment> judgments) : judgments_(std::move(judgments)) {
        for (std::size_t i = 0; i < judgments_.size(); ++i) {
            const auto& j = judgments_[i];
            if (!by_query_[j.query_id].emplace(j.debunk_id, j.level).second)
                throw DataError("duplicate judgment (" + j.query_id + ", " + j.debunk_id + ")");
        }
    }

    std::size_t size() const { return judgments_.size(); }
    bool empty() const { return judgments_.empty(); }
    auto begin() const { return judgments_.begin(); }
    auto end() const { return judgments_.end(); }

    std::size_t count(RelevanceLevel level) const {
        return static_cast<std::size_t>(std::count_if(judgments_.begin(), judgments_.end(),
                                                      [&](const auto& j) { return j.level == level; }));
    }

    std::optional<RelevanceLevel> level(const std::string& query_id, const std::string& debunk_id) const {
        auto q = by_query_.find(query_id);
        if (q == by_query_.end()) return std::nullopt;
        auto d = q->second.find(debunk_id);
        if (d == q->second.end()) return std::nullopt;
        return d->second;
    }

    /// Judgments of one query keyed by debunk id (ordered, for deterministic iteration).
    const std::map<std::string, RelevanceLevel>& for_query(const std::string& query_id) const {
        static const std::map<std::string, RelevanceLevel> none;
        auto q = by_query_.find(query_id);
        return q == by_query_.end() ? none : q->second;
    }

private:
    std::vector<RelevanceJudgment> judgments_;
    std::unordered_map<std::string, std::map<std::string, RelevanceLevel>> by_query_;
};

struct LoadedData {
    DebunkCorpus debunks;
    QuerySet queries;
    JudgmentSet judgments;
};

namespace detail {

template <typename Record>
void check_unique(const std::vector<Record>& records, const std::vector<std::size_t>& lines,
                  const std::string& source) {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto [it, fresh] = seen.emplace(records[i].id, lines[i]);
        if (!fresh)
            throw DataError(source + ": duplicate id \"" + records[i].id + "\" on lines " +
                            std::to_string(it->second) + " and " + std::to_string(lines[i]));
    }
}

inline std::optional<std::chrono::sys_days> get_date(const json& obj, const char* key, const std::string& loc) {
    auto s = get_optional_string(obj, key, loc);
    if (!s) return std::nullopt;
    auto d = parse_date(*s);
    if (!d) throw DataError(loc + ": field \"" + key + "\" is not a YYYY-MM-DD date: " + *s);
    return d;
}

}  // namespace detail

inline DebunkCorpus read_debunks(std::istream& in, const std::string& source) {
    std::vector<Debunk> out;
    std::vector<std::size_t> lines;
    detail::for_each_jsonl(in, source, [&](const detail::json& obj, std::size_t line_no) {
        const auto loc = detail::where(source, line_no);
        Debunk d;
        d.id = detail::get_string(obj, "id", loc);
        d.lang = detail::get_string(obj, "lang", loc);
        d.claim = detail::get_string(obj, "claim", loc);
        d.title = detail::get_string(obj, "title", loc);
        d.published_at = detail::get_date(obj, "published_at", loc);
        d.source_org = detail::get_optional_string(obj, "source", loc);
        if (d.id.empty()) throw DataError(loc + ": empty id");
        if (!is_lang_code(d.lang)) throw DataError(loc + ": lang must be a 2-letter lowercase code");
        if (d.claim.empty() && d.title.empty()) throw DataError(loc + ": claim and title both empty");
        out.push_back(std::move(d));
        lines.push_back(line_no);
    });
    detail::check_unique(out, lines, source);
    return DebunkCorpus(std::move(out));
}

inline QuerySet read_queries(std::istream& in, const std::string& source) {
    std::vector<QueryClaim> out;
    std::vector<std::size_t> lines;
    detail::for_each_jsonl(in, source, [&](const detail::json& obj, std::size_t line_no) {
        const auto loc = detail::where(source, line_no);
        QueryClaim q;
        q.id = detail::get_string(obj, "id", loc);
        q.lang = detail::get_string(obj, "lang", loc);
        q.text = detail::get_string(obj, "text", loc);
        q.text_en = detail::get_optional_string(obj, "text_en", loc);
        q.created_at = detail::get_date(obj, "created_at", loc);
        if (auto it = obj.find("textual"); it != obj.end()) {
            if (!it->is_boolean()) throw DataError(loc + ": field \"textual\" must be a boolean");
            q.textual = it->get<bool>();
        }
        if (q.id.empty()) throw DataError(loc + ": empty id");
        if (!is_lang_code(q.lang)) throw DataError(loc + ": lang must be a 2-letter lowercase code");
        if (q.text.empty()) throw DataError(loc + ": empty text");
        out.push_back(std::move(q));
        lines.push_back(line_no);
    });
    detail::check_unique(out, lines, source);
    return QuerySet(std::move(out));
}

/// Reads qrels and rejects ids that do not resolve in the given corpora.
inline JudgmentSet read_judgments(std::istream& in, const std::string& source, const QuerySet& queries,
                                  const DebunkCorpus& debunks) {
    std::vector<RelevanceJudgment> out;
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    detail::for_each_jsonl(in, source, [&](const detail::json& obj, std::size_t line_no) {
        const auto loc = detail::where(source, line_no);
        RelevanceJudgment j;
        j.query_id = detail::get_string(obj, "query_id", loc);
        j.debunk_id = detail::get_string(obj, "debunk_id", loc);
        const auto level = detail::get_string(obj, "level", loc);
        auto parsed = parse_level(level);
        if (!parsed) throw DataError(loc + ": unknown judgment level \"" + level + "\"");
        j.level = *parsed;
        if (!queries.contains(j.query_id)) throw DataError(loc + ": dangling query id \"" + j.query_id + "\"");
        if (!debunks.contains(j.debunk_id)) throw DataError(loc + ": dangling debunk id \"" + j.debunk_id + "\"");
        auto [it, fresh] = seen.emplace(std::pair{j.query_id, j.debunk_id}, line_no);
        if (!fresh)
            throw DataError(source + ": duplicate judgment (" + j.query_id + ", " + j.debunk_id + ") on lines " +
                            std::to_string(it->second) + " and " + std::to_string(line_no));
        out.push_back(std::move(j));
    });
    return JudgmentSet(std::move(out));
}

inline DebunkCorpus load_debunks(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_debunks(in, path.string());
}

inline QuerySet load_queries(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_queries(in, path.string());
}

inline LoadedData load_corpus(const std::filesystem::path& debunks_path, const std::filesystem::path& queries_path,
                              const std::filesystem::path& qrels_path) {
    LoadedData data{load_debunks(debunks_path), load_queries(queries_path), {}};
    auto in = detail::open_input(qrels_path);
    data.judgments = read_judgments(in, qrels_path.string(), data.queries, data.debunks);
    return data;
}

struct DatasetCounts {
    std::size_t queries = 0;
    std::size_t debunks = 0;
    std::size_t exact = 0;
    std::size_t partial = 0;
    std::size_t irrelevant = 0;
};

inline DatasetCounts count_dataset(const LoadedData& data) {
    return {data.queries.size(), data.debunks.size(), data.judgments.count(RelevanceLevel::Exact),
            data.judgments.count(RelevanceLevel::Partial), data.judgments.count(RelevanceLevel::Irrelevant)};
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    std::set<std::string> test_query_ids;
    double validation_fraction = 0.10;
    std::uint64_t seed = 42;
};

inline SplitSpec load_split_spec(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    detail::json obj;
    try {
        obj = detail::json::parse(in);
    } catch (const detail::json::parse_error& e) {
        throw DataError(path.string() + ": malformed JSON: " + e.what());
    }
    SplitSpec spec;
    try {
        for (const auto& id : obj.at("test_query_ids")) spec.test_query_ids.insert(id.get<std::string>());
        if (obj.contains("validation_fraction")) spec.validation_fraction = obj["validation_fraction"].get<double>();
        if (obj.contains("seed")) spec.seed = obj["seed"].get<std::uint64_t>();
    } catch (const detail::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return spec;
}

/// Query ids of one partition, ascending.
using QueryIds = std::vector<std::string>;

struct SplitResult {
    QueryIds train;
    QueryIds validation;
    QueryIds test;
    // Queries outside the split universe (non-textual).
    QueryIds excluded;
    // Positive judgments of non-test queries whose debunk is linked to a test query;
    // these never become training positives.
    std::set<std::pair<std::string, std::string>> leaked;
};

inline SplitResult split(const QuerySet& queries, const JudgmentSet& judgments, const SplitSpec& spec) {
    if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
        throw UsageError("validation_fraction must lie in (0, 1)");
    if (spec.test_query_ids.empty()) throw UsageError("test set empty");
    for (const auto& id : spec.test_query_ids)
        if (!queries.contains(id)) throw DataError("test query id \"" + id + "\" not in query set");

    SplitResult out;
    QueryIds pool;
    for (const auto& q : queries) {
        if (spec.test_query_ids.contains(q.id)) out.test.push_back(q.id);
        else if (!q.textual) out.excluded.push_back(q.id);
        else pool.push_back(q.id);
    }
    if (pool.empty()) throw DataError("empty training set");
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.excluded.begin(), out.excluded.end());
    std::sort(pool.begin(), pool.end());

    detail::Rng rng(spec.seed);
    detail::shuffle(std::span<std::string>(pool), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction * static_cast<double>(pool.size())));
    if (n_val >= pool.size()) throw DataError("empty training set");
    out.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.train.begin(), out.train.end());

    std::unordered_set<std::string> test_linked;
    for (const auto& j : judgments)
        if (is_positive(j.level) && spec.test_query_ids.contains(j.query_id)) test_linked.insert(j.debunk_id);
    for (const auto& j : judgments)
        if (is_positive(j.level) && !spec.test_query_ids.contains(j.query_id) && test_linked.contains(j.debunk_id))
            out.leaked.emplace(j.query_id, j.debunk_id);
    return out;
}

// ---------------------------------------------------------------------------
// Training pairs

struct LabelMap {
    double exact = 1.0;
    double partial = 0.5;
    double negative = 0.0;

    double operator()(RelevanceLevel level) const {
        switch (level) {
            case RelevanceLevel::Exact: return exact;
            case RelevanceLevel::Partial: return partial;
            case RelevanceLevel::Irrelevant: return negative;
        }
        return negative;
    }
};

struct TrainPair {
    std::string query_id;
    std::string debunk_id;
    double label;

    friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

struct PairOptions {
    std::size_t negatives_per_query = 10;
    LabelMap label_map{};
    std::uint64_t seed = 42;
    // Also emit judged-Irrelevant pairs as explicit negatives.
    bool include_judged_irrelevant = false;
    // Judgments that must not become positives (see SplitResult::leaked).
    const std::set<std::pair<std::string, std::string>>* excluded_positives = nullptr;
};

/// Positives from Exact/Partial judgments plus `negatives_per_query` uniformly
/// sampled unjudged-positive debunks per query.
///
/// Sampling: one mt19937_64 seeded with `seed`; queries visited in ascending id order;
/// the eligible pool is in corpus order; a partial Fisher-Yates shuffle moves the
/// sample to the front of the pool, and the sample is emitted in that drawn order.
inline std::vector<TrainPair> build_train_pairs(const QueryIds& query_ids, const JudgmentSet& judgments,
                                                const DebunkCorpus& corpus, const PairOptions& opts) {
    const auto& lm = opts.label_map;
    for (double v : {lm.exact, lm.partial, lm.negative})
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("label_map values must lie in [0, 1]");

    QueryIds ordered = query_ids;
    std::sort(ordered.begin(), ordered.end());
    ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

    detail::Rng rng(opts.seed);
    std::vector<TrainPair> pairs;
    std::vector<std::size_t> pool;
    for (const auto& qid : ordered) {
        const auto& judged = judgments.for_query(qid);
        for (const auto& [did, level] : judged) {
            if (!is_positive(level)) continue;
            if (opts.excluded_positives && opts.excluded_positives->contains({qid, did})) continue;
            pairs.push_back({qid, did, lm(level)});
        }
        if (opts.include_judged_irrelevant) {
            for (const auto& [did, level] : judged)
                if (level == RelevanceLevel::Irrelevant) pairs.push_back({qid, did, lm.negative});
        }
        pool.clear();
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            auto it = judged.find(corpus[i].id);
            if (it == judged.end()) {
                pool.push_back(i);
            } else if (it->second == RelevanceLevel::Irrelevant && !opts.include_judged_irrelevant) {
                pool.push_back(i);
            }
        }
        if (pool.size() < opts.negatives_per_query)
            throw DataError("query \"" + qid + "\" has only " + std::to_string(pool.size()) +
                            " eligible negatives, " + std::to_string(opts.negatives_per_query) + " required");
        detail::partial_shuffle(std::span<std::size_t>(pool), opts.negatives_per_query, rng);
        for (std::size_t k = 0; k < opts.negatives_per_query; ++k)
            pairs.push_back({qid, corpus[pool[k]].id, lm.negative});
    }
    return pairs;
}

}  // namespace xdnr
