#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "xdnr/detail/io.hpp"
#include "xdnr/error.hpp"

namespace xdnr {

struct ScoredDoc {
    std::string id;
    double score = 0.0;

    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
    friend std::ostream& operator<<(std::ostream& os, const ScoredDoc& d) { return os << d.id << ':' << d.score; }
};

/// Ranking for one query. Entry order is the ranking; rank r is entries[r - 1].
struct RankedList {
    std::string query_id;
    std::vector<ScoredDoc> entries;
    std::string stage_tag;

    friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Descending score, ascending id on ties.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

/// Throws DataError on duplicate ids or non-finite scores.
inline void validate(const RankedList& list) {
    std::unordered_set<std::string> seen;
    for (const auto& e : list.entries) {
        if (!std::isfinite(e.score))
            throw DataError("ranking for \"" + list.query_id + "\" has non-finite score for \"" + e.id + "\"");
        if (!seen.insert(e.id).second)
            throw DataError("ranking for \"" + list.query_id + "\" repeats id \"" + e.id + "\"");
    }
}

inline bool is_score_sorted(const RankedList& list) {
    return std::is_sorted(list.entries.begin(), list.entries.end(), ranks_before);
}

// Run files: one JSON object per line,
// {"query_id": str, "ranking": [{"id": str, "score": float}, ...], "stage_tag": str}.

inline detail::json to_json(const RankedList& list) {
    detail::json ranking = detail::json::array();
    for (const auto& e : list.entries) ranking.push_back({{"id", e.id}, {"score", e.score}});
    return {{"query_id", list.query_id}, {"ranking", std::move(ranking)}, {"stage_tag", list.stage_tag}};
}

inline void write_run(std::ostream& out, const std::vector<RankedList>& run) {
    for (const auto& list : run) out << to_json(list).dump() << '\n';
}

inline void save_run(const std::filesystem::path& path, const std::vector<RankedList>& run) {
    auto out = detail::open_output(path);
    write_run(out, run);
}

inline std::vector<RankedList> read_run(std::istream& in, const std::string& source) {
    std::vector<RankedList> run;
    detail::for_each_jsonl(in, source, [&](const detail::json& obj, std::size_t line_no) {
        const auto loc = detail::where(source, line_no);
        RankedList list;
        list.query_id = detail::get_string(obj, "query_id", loc);
        list.stage_tag = detail::get_optional_string(obj, "stage_tag", loc).value_or("");
        auto it = obj.find("ranking");
        if (it == obj.end() || !it->is_array()) throw DataError(loc + ": missing \"ranking\" array");
        for (const auto& item : *it) {
            if (!item.is_object()) throw DataError(loc + ": ranking entries must be objects");
            ScoredDoc e;
            e.id = detail::get_string(item, "id", loc);
            auto s = item.find("score");
            if (s == item.end() || !s->is_number()) throw DataError(loc + ": ranking entry without numeric score");
            e.score = s->get<double>();
            list.entries.push_back(std::move(e));
        }
        validate(list);
        run.push_back(std::move(list));
    });
    return run;
}

inline std::vector<RankedList> load_run(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_run(in, path.string());
}

}  // namespace xdnr
