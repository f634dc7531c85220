#pragma once

// Tokenizer, inverted index and Okapi BM25 (Lucene-style non-negative IDF).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "xdnr/corpus.hpp"
#include "xdnr/detail/io.hpp"
#include "xdnr/error.hpp"
#include "xdnr/ranked_list.hpp"

namespace xdnr {

namespace detail {

inline icu::BreakIterator& word_breaker() {
    thread_local std::unique_ptr<icu::BreakIterator> it = [] {
        UErrorCode status = U_ZERO_ERROR;
        std::unique_ptr<icu::BreakIterator> bi(icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
        if (U_FAILURE(status)) throw std::runtime_error(std::string("ICU word break iterator: ") + u_errorName(status));
        return bi;
    }();
    return *it;
}

}  // namespace detail

/// Unicode word segmentation (UAX #29) with simple case folding. Spaces and
/// punctuation-only segments are dropped; no stemming, no stopwords.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> terms;
    if (text.empty()) return terms;
    const auto utext = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    auto& bi = detail::word_breaker();
    bi.setText(utext);
    std::int32_t start = bi.first();
    for (std::int32_t end = bi.next(); end != icu::BreakIterator::DONE; start = end, end = bi.next()) {
        if (bi.getRuleStatus() == UBRK_WORD_NONE) continue;
        icu::UnicodeString word(utext, start, end - start);
        word.foldCase(U_FOLD_CASE_DEFAULT);
        std::string out;
        word.toUTF8String(out);
        terms.push_back(std::move(out));
    }
    return terms;
}

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    void check() const {
        if (!(k1 >= 0.0)) throw UsageError("bm25 k1 must be >= 0");
        if (!(b >= 0.0 && b <= 1.0)) throw UsageError("bm25 b must lie in [0, 1]");
    }
};

struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;

    friend bool operator==(const Posting&, const Posting&) = default;
};

/// Immutable after build; concurrent searches are safe.
class InvertedIndex {
public:
    InvertedIndex() = default;

    /// Indexes pre-tokenized documents; ordinal i is doc_ids[i].
    InvertedIndex(std::vector<std::string> doc_ids, const std::vector<std::vector<std::string>>& docs)
        : doc_ids_(std::move(doc_ids)) {
        if (doc_ids_.size() != docs.size()) throw UsageError("doc id / document count mismatch");
        if (doc_ids_.empty()) throw DataError("cannot index an empty corpus");
        doc_lengths_.reserve(docs.size());
        std::uint64_t total = 0;
        for (std::uint32_t ord = 0; ord < docs.size(); ++ord) {
            const auto& tokens = docs[ord];
            doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
            total += tokens.size();
            std::unordered_map<std::string_view, std::uint32_t> tf;
            for (const auto& t : tokens) ++tf[t];
            for (const auto& [term, count] : tf) postings_[std::string(term)].push_back({ord, count});
        }
        // Ordinals were appended in increasing order, so each list is already sorted.
        avg_doc_length_ = static_cast<double>(total) / static_cast<double>(doc_lengths_.size());
    }

    std::size_t doc_count() const { return doc_ids_.size(); }
    double avg_doc_length() const { return avg_doc_length_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    std::size_t term_count() const { return postings_.size(); }

    const std::vector<Posting>* postings(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

    friend bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
        return a.doc_ids_ == b.doc_ids_ && a.doc_lengths_ == b.doc_lengths_ && a.postings_ == b.postings_;
    }

    // Binary layout: "XDNRIDX1", u32 doc_count, then three sections each prefixed by
    // its u64 byte length:
    //   ids:      per doc u32 byte length + UTF-8 bytes
    //   lengths:  per doc u32 token count
    //   postings: u32 term count, then per term (ascending bytes) u32 byte length,
    //             term bytes, u32 df, df x (u32 ordinal, u32 tf)
    void write(std::ostream& out) const {
        out.write("XDNRIDX1", 8);
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(doc_ids_.size()));

        auto section = [&](auto&& fill) {
            std::ostringstream buf(std::ios::binary);
            fill(buf);
            const auto bytes = std::move(buf).str();
            detail::write_pod<std::uint64_t>(out, bytes.size());
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        };
        section([&](std::ostream& s) {
            for (const auto& id : doc_ids_) {
                detail::write_pod<std::uint32_t>(s, static_cast<std::uint32_t>(id.size()));
                s.write(id.data(), static_cast<std::streamsize>(id.size()));
            }
        });
        section([&](std::ostream& s) {
            for (auto len : doc_lengths_) detail::write_pod<std::uint32_t>(s, len);
        });
        section([&](std::ostream& s) {
            std::vector<const std::string*> terms;
            terms.reserve(postings_.size());
            for (const auto& [term, _] : postings_) terms.push_back(&term);
            std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
            detail::write_pod<std::uint32_t>(s, static_cast<std::uint32_t>(terms.size()));
            for (const auto* term : terms) {
                const auto& list = postings_.at(*term);
                detail::write_pod<std::uint32_t>(s, static_cast<std::uint32_t>(term->size()));
                s.write(term->data(), static_cast<std::streamsize>(term->size()));
                detail::write_pod<std::uint32_t>(s, static_cast<std::uint32_t>(list.size()));
                for (const auto& p : list) {
                    detail::write_pod<std::uint32_t>(s, p.doc);
                    detail::write_pod<std::uint32_t>(s, p.tf);
                }
            }
        });
        if (!out) throw DataError("failed writing index");
    }

    static InvertedIndex read(std::istream& in) {
        const std::string what = "lexical index";
        detail::expect_magic(in, "XDNRIDX1", what);
        const auto n = detail::read_pod<std::uint32_t>(in, what);
        auto read_section = [&]() {
            const auto len = detail::read_pod<std::uint64_t>(in, what);
            std::istringstream s(detail::read_bytes(in, static_cast<std::size_t>(len), what + " section"),
                                 std::ios::binary);
            return s;
        };
        InvertedIndex idx;
        {
            auto s = read_section();
            for (std::uint32_t i = 0; i < n; ++i) {
                const auto len = detail::read_pod<std::uint32_t>(s, what);
                idx.doc_ids_.push_back(detail::read_bytes(s, len, what + " id"));
            }
        }
        {
            auto s = read_section();
            std::uint64_t total = 0;
            for (std::uint32_t i = 0; i < n; ++i) {
                idx.doc_lengths_.push_back(detail::read_pod<std::uint32_t>(s, what));
                total += idx.doc_lengths_.back();
            }
            idx.avg_doc_length_ = n ? static_cast<double>(total) / n : 0.0;
        }
        {
            auto s = read_section();
            const auto terms = detail::read_pod<std::uint32_t>(s, what);
            for (std::uint32_t t = 0; t < terms; ++t) {
                const auto len = detail::read_pod<std::uint32_t>(s, what);
                auto term = detail::read_bytes(s, len, what + " term");
                const auto df = detail::read_pod<std::uint32_t>(s, what);
                std::vector<Posting> list;
                list.reserve(df);
                for (std::uint32_t k = 0; k < df; ++k) {
                    Posting p{detail::read_pod<std::uint32_t>(s, what), detail::read_pod<std::uint32_t>(s, what)};
                    if (p.doc >= n) throw DataError(what + ": posting ordinal out of range");
                    if (!list.empty() && p.doc <= list.back().doc) throw DataError(what + ": postings not sorted");
                    list.push_back(p);
                }
                idx.postings_.emplace(std::move(term), std::move(list));
            }
        }
        return idx;
    }

    void save(const std::filesystem::path& path) const {
        auto out = detail::open_output(path, true);
        write(out);
    }

    static InvertedIndex load(const std::filesystem::path& path) {
        auto in = detail::open_input(path, true);
        return read(in);
    }

private:
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    double avg_doc_length_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

/// Translated text keyed by debunk or query id, from {"id","text_en"} JSONL.
using Translations = std::unordered_map<std::string, std::string>;

inline Translations load_translations(const std::filesystem::path& path) {
    Translations out;
    detail::for_each_jsonl(path, [&](const detail::json& obj, std::size_t line_no) {
        const auto loc = detail::where(path.string(), line_no);
        auto id = detail::get_string(obj, "id", loc);
        auto text = detail::get_string(obj, "text_en", loc);
        if (!out.emplace(std::move(id), std::move(text)).second) throw DataError(loc + ": duplicate id");
    });
    return out;
}

/// Indexes doc_text of every debunk, or its translation when `translations` is given.
inline InvertedIndex build_index(const DebunkCorpus& corpus, const Translations* translations = nullptr) {
    if (corpus.empty()) throw DataError("cannot index an empty corpus");
    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> docs;
    ids.reserve(corpus.size());
    docs.reserve(corpus.size());
    std::size_t missing = 0;
    std::string first_missing;
    for (const auto& d : corpus) {
        ids.push_back(d.id);
        if (translations) {
            auto it = translations->find(d.id);
            if (it == translations->end()) {
                if (missing++ == 0) first_missing = d.id;
                continue;
            }
            docs.push_back(tokenize(it->second));
        } else {
            docs.push_back(tokenize(doc_text(d)));
        }
    }
    if (missing)
        throw DataError("translations missing for " + std::to_string(missing) + " debunks (first: \"" +
                        first_missing + "\")");
    return InvertedIndex(std::move(ids), docs);
}

/// Lucene/Elasticsearch IDF: ln(1 + (N - df + 0.5) / (df + 0.5)), never negative.
inline double bm25_idf(std::size_t doc_count, std::size_t df) {
    const auto n = static_cast<double>(doc_count);
    const auto f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

/// Term-at-a-time BM25 over the query terms (repeated terms count repeatedly).
/// Zero-score documents are omitted; ties go to the smaller id.
inline RankedList bm25_search(const InvertedIndex& index, const std::vector<std::string>& query,
                              const Bm25Params& params, std::size_t top_k) {
    if (top_k < 1) throw UsageError("top_k must be >= 1");
    params.check();
    RankedList out;
    out.stage_tag = "bm25";
    if (query.empty()) return out;

    const auto& lengths = index.doc_lengths();
    const double avgdl = index.avg_doc_length();
    std::vector<double> acc(index.doc_count(), 0.0);
    std::vector<std::uint32_t> touched;
    for (const auto& term : query) {
        const auto* list = index.postings(term);
        if (!list) continue;
        const double idf = bm25_idf(index.doc_count(), list->size());
        for (const auto& p : *list) {
            const double tf = p.tf;
            const double norm = avgdl > 0.0 ? lengths[p.doc] / avgdl : 0.0;
            if (acc[p.doc] == 0.0) touched.push_back(p.doc);
            acc[p.doc] += idf * tf / (tf + params.k1 * (1.0 - params.b + params.b * norm));
        }
    }
    std::vector<ScoredDoc> hits;
    hits.reserve(touched.size());
    for (auto d : touched)
        if (acc[d] > 0.0) hits.push_back({index.doc_ids()[d], acc[d]});
    const auto k = std::min(top_k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
    hits.resize(k);
    out.entries = std::move(hits);
    return out;
}

}  // namespace xdnr
