#pragma once

// Id-aligned embedding storage, exact cosine top-k search, and a deterministic
// feature-hashing embedder used when no external encoder is available.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "xdnr/detail/io.hpp"
#include "xdnr/detail/random.hpp"
#include "xdnr/error.hpp"
#include "xdnr/projection_head.hpp"
#include "xdnr/ranked_list.hpp"

namespace xdnr {

inline double dot(std::span<const double> u, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
    return acc;
}

inline double l2_norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

/// u.v / (|u| |v|), clamped to [-1, 1] against rounding.
inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw UsageError("cosine: dimension mismatch");
    const double nu = l2_norm(u), nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) throw UsageError("cosine: zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Row-major matrix of embeddings, one row per id.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    EmbeddingMatrix(std::size_t dim, std::vector<std::string> ids, std::vector<double> values)
        : dim_(dim), ids_(std::move(ids)), values_(std::move(values)) {
        if (dim_ == 0) throw DataError("embedding dim must be > 0");
        if (values_.size() != ids_.size() * dim_) throw DataError("embedding rows do not match id count");
        for (std::size_t i = 0; i < values_.size(); ++i)
            if (!std::isfinite(values_[i]))
                throw DataError("non-finite embedding value in row \"" + ids_[i / dim_] + "\"");
        row_of_.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (!row_of_.emplace(ids_[i], i).second) throw DataError("duplicate embedding id \"" + ids_[i] + "\"");
    }

    std::size_t dim() const { return dim_; }
    std::size_t rows() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<double>& values() const { return values_; }

    std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = row_of_.find(id);
        if (it == row_of_.end()) return std::nullopt;
        return it->second;
    }

    std::span<const double> row(const std::string& id) const {
        auto r = find(id);
        if (!r) throw DataError("no embedding for id \"" + id + "\"");
        return row(*r);
    }

    /// Free-form provenance, e.g. "projection_sha256".
    std::map<std::string, std::string> metadata;

    friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
        return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
    }

    // Binary layout: "XDNREMB1", u32 dim, u32 count, then per row
    // u16 id byte length, UTF-8 id bytes, dim x f32.
    void write(std::ostream& out) const {
        out.write("XDNREMB1", 8);
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ids_.size()));
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (ids_[i].size() > 0xFFFF) throw DataError("embedding id longer than 65535 bytes");
            detail::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(ids_[i].size()));
            out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
            for (double v : row(i)) detail::write_pod<float>(out, static_cast<float>(v));
        }
        if (!out) throw DataError("failed writing embeddings");
    }

    static EmbeddingMatrix read_binary(std::istream& in) {
        const std::string what = "embedding file";
        detail::expect_magic(in, "XDNREMB1", what);
        const auto dim = detail::read_pod<std::uint32_t>(in, what);
        const auto count = detail::read_pod<std::uint32_t>(in, what);
        std::vector<std::string> ids;
        std::vector<double> values;
        ids.reserve(count);
        values.reserve(static_cast<std::size_t>(count) * dim);
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto len = detail::read_pod<std::uint16_t>(in, what);
            ids.push_back(detail::read_bytes(in, len, what + " id"));
            for (std::uint32_t k = 0; k < dim; ++k) values.push_back(detail::read_pod<float>(in, what));
        }
        return EmbeddingMatrix(dim, std::move(ids), std::move(values));
    }

    /// {"id": str, "vec": [floats]} per line.
    static EmbeddingMatrix read_jsonl(std::istream& in, const std::string& source) {
        std::vector<std::string> ids;
        std::vector<double> values;
        std::size_t dim = 0;
        detail::for_each_jsonl(in, source, [&](const detail::json& obj, std::size_t line_no) {
            const auto loc = detail::where(source, line_no);
            ids.push_back(detail::get_string(obj, "id", loc));
            auto it = obj.find("vec");
            if (it == obj.end() || !it->is_array()) throw DataError(loc + ": missing \"vec\" array");
            if (dim == 0) dim = it->size();
            if (it->size() != dim || dim == 0) throw DataError(loc + ": vector dimension mismatch");
            for (const auto& v : *it) {
                if (!v.is_number()) throw DataError(loc + ": non-numeric vector entry");
                values.push_back(v.get<double>());
            }
        });
        if (ids.empty()) throw DataError(source + ": no embeddings");
        return EmbeddingMatrix(dim, std::move(ids), std::move(values));
    }

    void save(const std::filesystem::path& path) const {
        auto out = detail::open_output(path, true);
        write(out);
    }

    /// Binary when the file starts with the magic, JSONL otherwise.
    static EmbeddingMatrix load(const std::filesystem::path& path) {
        auto in = detail::open_input(path, true);
        char head[8] = {};
        in.read(head, 8);
        const bool binary = in.gcount() == 8 && std::string_view(head, 8) == "XDNREMB1";
        in.clear();
        in.seekg(0);
        return binary ? read_binary(in) : read_jsonl(in, path.string());
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> values_;
    std::unordered_map<std::string, std::size_t> row_of_;
};

/// Embedding matrix plus cached row norms. Immutable; searches are thread-safe.
class DenseIndex {
public:
    explicit DenseIndex(EmbeddingMatrix matrix) : matrix_(std::move(matrix)) {
        norms_.reserve(matrix_.rows());
        for (std::size_t i = 0; i < matrix_.rows(); ++i) {
            norms_.push_back(l2_norm(matrix_.row(i)));
            if (norms_.back() == 0.0) ++zero_norm_rows_;
        }
    }

    const EmbeddingMatrix& matrix() const { return matrix_; }
    const std::vector<double>& norms() const { return norms_; }
    std::size_t dim() const { return matrix_.dim(); }
    std::size_t size() const { return matrix_.rows(); }
    /// Rows excluded from every search because their norm is zero.
    std::size_t zero_norm_rows() const { return zero_norm_rows_; }

private:
    EmbeddingMatrix matrix_;
    std::vector<double> norms_;
    std::size_t zero_norm_rows_ = 0;
};

/// Exact top-k by cosine over all rows with nonzero norm.
inline RankedList dense_search(const DenseIndex& index, std::span<const double> query, std::size_t top_k) {
    if (top_k < 1) throw UsageError("top_k must be >= 1");
    if (query.size() != index.dim()) throw UsageError("query dimension mismatch");
    const double qn = l2_norm(query);
    if (qn == 0.0) throw UsageError("zero-norm query vector");

    const auto& m = index.matrix();
    std::vector<ScoredDoc> hits;
    hits.reserve(m.rows() - index.zero_norm_rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double dn = index.norms()[i];
        if (dn == 0.0) continue;
        hits.push_back({m.ids()[i], std::clamp(dot(query, m.row(i)) / (qn * dn), -1.0, 1.0)});
    }
    const auto k = std::min(top_k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
    hits.resize(k);
    RankedList out;
    out.entries = std::move(hits);
    out.stage_tag = "dense";
    return out;
}

/// Searches every row of `queries`; results are independent of `threads`.
inline std::vector<RankedList> dense_search_batch(const DenseIndex& index, const EmbeddingMatrix& queries,
                                                  std::size_t top_k, unsigned threads = 1) {
    std::vector<RankedList> out(queries.rows());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            out[i] = dense_search(index, queries.row(i), top_k);
            out[i].query_id = queries.ids()[i];
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, out.size()))));
    if (threads == 1) {
        work(0, out.size());
        return out;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (out.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t b = t * chunk, e = std::min(out.size(), b + chunk);
        if (b < e) pool.emplace_back(work, b, e);
    }
    pool.clear();
    return out;
}

/// Replaces each row by head.forward(row); records the head checksum in metadata.
inline EmbeddingMatrix apply_projection(const EmbeddingMatrix& matrix, const ProjectionHead& head) {
    if (head.dim_in != matrix.dim()) throw UsageError("projection input dim does not match embedding dim");
    std::vector<double> values(matrix.rows() * head.dim_out);
    for (std::size_t i = 0; i < matrix.rows(); ++i)
        head.forward(matrix.row(i), std::span<double>(values.data() + i * head.dim_out, head.dim_out));
    EmbeddingMatrix out(head.dim_out, matrix.ids(), std::move(values));
    out.metadata = matrix.metadata;
    out.metadata["projection_sha256"] = head.checksum();
    return out;
}

namespace detail {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Signed feature hashing of character 3-grams, L2-normalized.
///
/// The text is case-folded and padded with one space on each side; every window
/// of three code points is hashed (FNV-1a mixed with the seed) to a bucket and a
/// sign. Text with no surviving features maps to a unit vector determined by the seed.
inline std::vector<double> hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
    if (dim < 8) throw UsageError("hash_embed dim must be >= 8");
    std::vector<double> v(dim, 0.0);

    if (!text.empty()) {
        auto folded = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
        folded.foldCase(U_FOLD_CASE_DEFAULT);
        std::vector<std::string> cps{" "};
        for (std::int32_t i = 0; i < folded.length();) {
            const UChar32 cp = folded.char32At(i);
            std::string utf8;
            icu::UnicodeString(cp).toUTF8String(utf8);
            cps.push_back(std::move(utf8));
            i = folded.moveIndex32(i, 1);
        }
        cps.emplace_back(" ");
        const std::uint64_t salt = detail::mix64(seed);
        for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
            const auto gram = cps[i] + cps[i + 1] + cps[i + 2];
            const std::uint64_t h = detail::mix64(detail::fnv1a64(gram) ^ salt);
            v[h % dim] += (h >> 63) ? -1.0 : 1.0;
        }
    }

    double norm = l2_norm(v);
    if (norm == 0.0) {
        for (std::size_t i = 0; i < dim; ++i) v[i] = (detail::mix64(seed ^ (0xA5A5A5A5ULL + i)) >> 63) ? -1.0 : 1.0;
        norm = std::sqrt(static_cast<double>(dim));
    }
    for (double& x : v) x /= norm;
    return v;
}

/// hash_embed over (id, text) records.
inline EmbeddingMatrix hash_embed_all(const std::vector<std::pair<std::string, std::string>>& records,
                                      std::size_t dim, std::uint64_t seed) {
    std::vector<std::string> ids;
    std::vector<double> values;
    ids.reserve(records.size());
    values.reserve(records.size() * dim);
    for (const auto& [id, text] : records) {
        ids.push_back(id);
        const auto v = hash_embed(text, dim, seed);
        values.insert(values.end(), v.begin(), v.end());
    }
    EmbeddingMatrix m(dim, std::move(ids), std::move(values));
    m.metadata["embedder"] = "hash3gram";
    m.metadata["seed"] = std::to_string(seed);
    return m;
}

}  // namespace xdnr
