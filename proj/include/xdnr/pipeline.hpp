#pragma once

// Multistage retrieval: a stage-1 ranker produces candidates, the top K are
// re-scored (pair scorer) or re-ordered (listwise scorer), and the remainder
// keeps its stage-1 order behind the re-ranked block.

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "xdnr/corpus.hpp"
#include "xdnr/dense_index.hpp"
#include "xdnr/detail/io.hpp"
#include "xdnr/error.hpp"
#include "xdnr/lexical_index.hpp"
#include "xdnr/metrics.hpp"
#include "xdnr/ranked_list.hpp"

namespace xdnr {

enum class ScorerKind { PassThrough, ExternalPair, ExternalListwise, OracleQrels };

inline const char* to_string(ScorerKind kind) {
    switch (kind) {
        case ScorerKind::PassThrough: return "passthrough";
        case ScorerKind::ExternalPair: return "pair";
        case ScorerKind::ExternalListwise: return "listwise";
        case ScorerKind::OracleQrels: return "oracle";
    }
    return "?";
}

inline ScorerKind parse_scorer_kind(std::string_view s) {
    if (s == "passthrough") return ScorerKind::PassThrough;
    if (s == "pair") return ScorerKind::ExternalPair;
    if (s == "listwise") return ScorerKind::ExternalListwise;
    if (s == "oracle") return ScorerKind::OracleQrels;
    throw UsageError("unknown scorer \"" + std::string(s) + "\"");
}

struct RerankConfig {
    std::size_t top_k_stage1 = 100;
    std::size_t depth = 20;
    ScorerKind scorer = ScorerKind::PassThrough;

    void check() const {
        if (depth < 1 || depth > top_k_stage1) throw UsageError("rerank depth must satisfy 1 <= K <= top_k_stage1");
    }
};

/// Raised when an external scorer fails; carries the stage-1 ranking so the
/// caller can fall back to it.
class ScorerError : public std::runtime_error {
public:
    ScorerError(const std::string& what, RankedList stage1 = {})
        : std::runtime_error(what), stage1_(std::move(stage1)) {}
    const RankedList& stage1() const { return stage1_; }

private:
    RankedList stage1_;
};

// ---------------------------------------------------------------------------
// Stage 1

class Stage1Ranker {
public:
    virtual ~Stage1Ranker() = default;
    virtual RankedList search(const QueryClaim& query, std::size_t top_k) const = 0;
    virtual std::string tag() const = 0;
};

/// BM25 over the inverted index; with `use_translated`, queries use text_en when present.
class LexicalRanker final : public Stage1Ranker {
public:
    LexicalRanker(const InvertedIndex& index, Bm25Params params = {}, bool use_translated = false)
        : index_(index), params_(params), use_translated_(use_translated) {
        params_.check();
    }

    RankedList search(const QueryClaim& query, std::size_t top_k) const override {
        const auto& text = use_translated_ && query.text_en ? *query.text_en : query.text;
        auto list = bm25_search(index_, tokenize(text), params_, top_k);
        list.query_id = query.id;
        list.stage_tag = tag();
        return list;
    }

    std::string tag() const override {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bm25(k1=%g,b=%g%s)", params_.k1, params_.b, use_translated_ ? ",translated" : "");
        return buf;
    }

private:
    const InvertedIndex& index_;
    Bm25Params params_;
    bool use_translated_;
};

using QueryEncoder = std::function<std::vector<double>(const QueryClaim&)>;

/// Looks query vectors up by id in a precomputed matrix.
inline QueryEncoder lookup_encoder(const EmbeddingMatrix& queries) {
    return [&queries](const QueryClaim& q) {
        const auto row = queries.row(q.id);
        return std::vector<double>(row.begin(), row.end());
    };
}

inline QueryEncoder hash_encoder(std::size_t dim, std::uint64_t seed) {
    return [dim, seed](const QueryClaim& q) { return hash_embed(q.text, dim, seed); };
}

/// Exact cosine search; the optional head projects query vectors and must be the
/// same head already applied to the indexed documents.
class DenseRanker final : public Stage1Ranker {
public:
    DenseRanker(const DenseIndex& index, QueryEncoder encoder, std::string name = "dense",
                const ProjectionHead* head = nullptr)
        : index_(index), encoder_(std::move(encoder)), name_(std::move(name)), head_(head) {}

    RankedList search(const QueryClaim& query, std::size_t top_k) const override {
        auto v = encoder_(query);
        if (head_) v = head_->forward(v);
        auto list = dense_search(index_, v, top_k);
        list.query_id = query.id;
        list.stage_tag = tag();
        return list;
    }

    std::string tag() const override { return name_; }

private:
    const DenseIndex& index_;
    QueryEncoder encoder_;
    std::string name_;
    const ProjectionHead* head_;
};

// ---------------------------------------------------------------------------
// Cross-scorer inputs

/// Cross-encoder input: original-language query text, then the debunk's claim
/// followed by its title (doc_text).
struct PairInput {
    std::string doc_id;
    std::string query_text;
    std::string doc_text;

    friend bool operator==(const PairInput&, const PairInput&) = default;
};

inline std::vector<PairInput> make_pair_inputs(const QueryClaim& query, std::span<const ScoredDoc> candidates,
                                               const DebunkCorpus& corpus) {
    std::vector<PairInput> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        auto i = corpus.find(c.id);
        if (!i) throw DataError("candidate \"" + c.id + "\" not in debunk corpus");
        out.push_back({c.id, query.text, doc_text(corpus[*i])});
    }
    return out;
}

inline std::vector<PairInput> make_pair_inputs(const QueryClaim& query, const RankedList& candidates,
                                               const DebunkCorpus& corpus) {
    return make_pair_inputs(query, std::span<const ScoredDoc>(candidates.entries), corpus);
}

struct ListCandidate {
    std::string id;
    std::string text;
};

class PairScorer {
public:
    virtual ~PairScorer() = default;
    /// One finite score per input, same order.
    virtual std::vector<double> score(std::span<const PairInput> inputs) = 0;
};

class ListwiseScorer {
public:
    virtual ~ListwiseScorer() = default;
    /// Candidate ids in preferred order; may be malformed (see repair_permutation).
    virtual std::vector<std::string> order(const std::string& query, std::span<const ListCandidate> candidates) = 0;
};

struct RepairedOrder {
    std::vector<std::string> ids;
    bool repaired = false;
};

/// Drops foreign ids, keeps the first occurrence of duplicates, and appends
/// missing candidates in their stage-1 order.
inline RepairedOrder repair_permutation(std::span<const std::string> candidates, std::span<const std::string> returned) {
    const std::unordered_set<std::string> known(candidates.begin(), candidates.end());
    std::unordered_set<std::string> placed;
    RepairedOrder out;
    for (const auto& id : returned) {
        if (!known.contains(id) || !placed.insert(id).second) {
            out.repaired = true;
            continue;
        }
        out.ids.push_back(id);
    }
    for (const auto& id : candidates) {
        if (placed.contains(id)) continue;
        out.repaired = true;
        out.ids.push_back(id);
    }
    return out;
}

struct RerankResult {
    RankedList ranking;
    bool repaired = false;
};

/// Sends the whole candidate list in one request and reorders by the returned
/// permutation. Scores become K, K-1, ..., 1 down the new order.
inline RerankResult listwise_rerank(const QueryClaim& query, const RankedList& candidates, ListwiseScorer& scorer,
                                    const DebunkCorpus& corpus) {
    if (candidates.entries.empty()) throw UsageError("listwise_rerank needs at least one candidate");
    std::vector<ListCandidate> items;
    std::vector<std::string> ids;
    for (const auto& pi : make_pair_inputs(query, candidates, corpus)) {
        items.push_back({pi.doc_id, pi.doc_text});
        ids.push_back(pi.doc_id);
    }
    const auto returned = scorer.order(query.text, items);
    if (returned.empty()) throw ScorerError("listwise scorer returned an empty order", candidates);
    auto fixed = repair_permutation(ids, returned);
    RerankResult out;
    out.repaired = fixed.repaired;
    out.ranking.query_id = candidates.query_id;
    out.ranking.stage_tag = candidates.stage_tag;
    const auto n = fixed.ids.size();
    for (std::size_t i = 0; i < n; ++i) out.ranking.entries.push_back({fixed.ids[i], static_cast<double>(n - i)});
    return out;
}

// ---------------------------------------------------------------------------
// Re-rankers

class Reranker {
public:
    virtual ~Reranker() = default;
    /// Reorders (and may rescore) the head block; must return a permutation of it.
    virtual RerankResult rerank(const QueryClaim& query, const RankedList& head) = 0;
    virtual std::string tag() const = 0;
};

class PassThroughReranker final : public Reranker {
public:
    RerankResult rerank(const QueryClaim&, const RankedList& head) override { return {head, false}; }
    std::string tag() const override { return "passthrough"; }
};

namespace detail {

inline RerankResult sort_by_scores(const RankedList& head, const std::vector<double>& scores) {
    std::vector<std::size_t> order(head.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    RerankResult out;
    out.ranking.query_id = head.query_id;
    out.ranking.stage_tag = head.stage_tag;
    for (auto i : order) out.ranking.entries.push_back({head.entries[i].id, scores[i]});
    return out;
}

}  // namespace detail

/// Scores each candidate by its graded gain; ties keep stage-1 order.
class OracleQrelsReranker final : public Reranker {
public:
    explicit OracleQrelsReranker(const Qrels& qrels) : qrels_(qrels) {}

    RerankResult rerank(const QueryClaim&, const RankedList& head) override {
        std::vector<double> scores;
        for (const auto& e : head.entries) scores.push_back(qrels_.gain(head.query_id, e.id));
        return detail::sort_by_scores(head, scores);
    }
    std::string tag() const override { return "oracle"; }

private:
    const Qrels& qrels_;
};

class PairReranker final : public Reranker {
public:
    PairReranker(PairScorer& scorer, const DebunkCorpus& corpus) : scorer_(scorer), corpus_(corpus) {}

    RerankResult rerank(const QueryClaim& query, const RankedList& head) override {
        const auto inputs = make_pair_inputs(query, head, corpus_);
        const auto scores = scorer_.score(inputs);
        if (scores.size() != inputs.size()) throw ScorerError("pair scorer returned wrong number of scores");
        for (double s : scores)
            if (!std::isfinite(s)) throw ScorerError("pair scorer returned a non-finite score");
        return detail::sort_by_scores(head, scores);
    }
    std::string tag() const override { return "pair"; }

private:
    PairScorer& scorer_;
    const DebunkCorpus& corpus_;
};

class ListwiseReranker final : public Reranker {
public:
    ListwiseReranker(ListwiseScorer& scorer, const DebunkCorpus& corpus) : scorer_(scorer), corpus_(corpus) {}

    RerankResult rerank(const QueryClaim& query, const RankedList& head) override {
        if (head.entries.empty()) return {head, false};
        return listwise_rerank(query, head, scorer_, corpus_);
    }
    std::string tag() const override { return "listwise"; }

private:
    ListwiseScorer& scorer_;
    const DebunkCorpus& corpus_;
};

/// Re-ranks the first `depth` entries of a stage-1 list; the tail is copied unchanged.
inline RerankResult rerank(const QueryClaim& query, const RankedList& stage1, const RerankConfig& config,
                           Reranker& reranker) {
    config.check();
    const auto k = std::min(config.depth, stage1.entries.size());
    RankedList head{stage1.query_id, {stage1.entries.begin(), stage1.entries.begin() + static_cast<std::ptrdiff_t>(k)},
                    stage1.stage_tag};
    RerankResult block;
    try {
        block = reranker.rerank(query, head);
    } catch (const ScorerError& e) {
        throw ScorerError(e.what(), stage1);
    }

    // Depth confinement: the block must be a permutation of the head.
    std::unordered_set<std::string> expect;
    for (const auto& e : head.entries) expect.insert(e.id);
    bool ok = block.ranking.entries.size() == head.entries.size();
    for (const auto& e : block.ranking.entries) ok = ok && expect.erase(e.id) == 1;
    if (!ok) throw ScorerError("re-ranker did not return a permutation of its candidates", stage1);

    RerankResult out;
    out.repaired = block.repaired;
    out.ranking.query_id = stage1.query_id;
    out.ranking.entries = std::move(block.ranking.entries);
    out.ranking.entries.insert(out.ranking.entries.end(), stage1.entries.begin() + static_cast<std::ptrdiff_t>(k),
                               stage1.entries.end());
    out.ranking.stage_tag = stage1.stage_tag + ">" + reranker.tag() + "@K=" + std::to_string(config.depth) + "/" +
                            std::to_string(config.top_k_stage1);
    return out;
}

/// Stage-1 search for top_k_stage1 candidates, then rerank().
inline RankedList retrieve(const QueryClaim& query, const Stage1Ranker& stage1, const RerankConfig& config,
                           Reranker& reranker) {
    config.check();
    const auto candidates = stage1.search(query, config.top_k_stage1);
    return rerank(query, candidates, config, reranker).ranking;
}

// ---------------------------------------------------------------------------
// External scorer protocol (line-delimited JSON over a child's stdin/stdout)
//
//   handshake  engine -> {"proto":"xdnr-scorer","version":1}
//              scorer -> {"proto":"xdnr-scorer","version":1}
//   pair       {"type":"pair","id":str,"query":str,"doc":str} -> {"id":str,"score":float}
//   listwise   {"type":"list","query":str,"candidates":[{"id":str,"text":str},...]} -> {"order":[ids]}
//   any request may be answered with {"error": str}

inline constexpr const char* kScorerProto = "xdnr-scorer";
inline constexpr int kScorerVersion = 1;

inline detail::json handshake_message() { return {{"proto", kScorerProto}, {"version", kScorerVersion}}; }

inline detail::json pair_request(const std::string& id, const std::string& query, const std::string& doc) {
    return {{"type", "pair"}, {"id", id}, {"query", query}, {"doc", doc}};
}

inline detail::json listwise_request(const std::string& query, std::span<const ListCandidate> candidates) {
    detail::json items = detail::json::array();
    for (const auto& c : candidates) items.push_back({{"id", c.id}, {"text", c.text}});
    return {{"type", "list"}, {"query", query}, {"candidates", std::move(items)}};
}

inline void check_handshake(const detail::json& msg) {
    if (!msg.is_object() || msg.value("proto", "") != kScorerProto || !msg.contains("version") ||
        !msg["version"].is_number_integer() || msg["version"].get<int>() != kScorerVersion)
        throw ScorerError("scorer handshake mismatch: " + msg.dump());
}

inline void check_not_error(const detail::json& msg) {
    if (!msg.is_object()) throw ScorerError("scorer response is not a JSON object");
    if (auto it = msg.find("error"); it != msg.end())
        throw ScorerError("scorer error: " + (it->is_string() ? it->get<std::string>() : it->dump()));
}

/// Validates a pair response for request `expected_id` and returns its score.
inline double parse_pair_response(const detail::json& msg, const std::string& expected_id) {
    check_not_error(msg);
    auto id = msg.find("id");
    auto score = msg.find("score");
    if (id == msg.end() || !id->is_string() || id->get<std::string>() != expected_id)
        throw ScorerError("pair response id mismatch, expected \"" + expected_id + "\"");
    if (score == msg.end() || !score->is_number() || !std::isfinite(score->get<double>()))
        throw ScorerError("pair response without finite score");
    return score->get<double>();
}

/// Validates a listwise response and returns its (unrepaired) order.
inline std::vector<std::string> parse_listwise_response(const detail::json& msg) {
    check_not_error(msg);
    auto order = msg.find("order");
    if (order == msg.end() || !order->is_array()) throw ScorerError("listwise response without \"order\" array");
    std::vector<std::string> ids;
    for (const auto& v : *order) {
        if (!v.is_string()) throw ScorerError("listwise order entries must be strings");
        ids.push_back(v.get<std::string>());
    }
    return ids;
}

/// Child process speaking the scorer protocol. One request at a time.
class ScorerProcess {
public:
    /// Runs `command` through /bin/sh and performs the handshake.
    explicit ScorerProcess(const std::string& command, std::chrono::milliseconds timeout = std::chrono::seconds(30))
        : timeout_(timeout) {
        std::signal(SIGPIPE, SIG_IGN);
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0) throw ScorerError(std::string("pipe: ") + std::strerror(errno));
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw ScorerError(std::string("pipe: ") + std::strerror(errno));
        }
        pid_ = ::fork();
        if (pid_ < 0) {
            const int err = errno;
            for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
            throw ScorerError(std::string("fork: ") + std::strerror(err));
        }
        if (pid_ == 0) {
            // Own process group, so a timeout kill also reaches commands the shell forked.
            ::setpgid(0, 0);
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::setpgid(pid_, pid_);
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
        ::fcntl(in_fd_, F_SETFD, FD_CLOEXEC);
        ::fcntl(out_fd_, F_SETFD, FD_CLOEXEC);
        try {
            check_handshake(exchange(handshake_message()));
        } catch (...) {
            shutdown();
            throw;
        }
    }

    ScorerProcess(const ScorerProcess&) = delete;
    ScorerProcess& operator=(const ScorerProcess&) = delete;

    ~ScorerProcess() { shutdown(); }

    /// Writes one request line and reads one response line.
    detail::json exchange(const detail::json& request) {
        auto line = request.dump();
        line.push_back('\n');
        for (std::size_t off = 0; off < line.size();) {
            const auto n = ::write(in_fd_, line.data() + off, line.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ScorerError(std::string("write to scorer failed: ") + std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
        const auto reply = read_line();
        try {
            return detail::json::parse(reply);
        } catch (const detail::json::parse_error&) {
            throw ScorerError("scorer sent malformed JSON: " + reply);
        }
    }

private:
    // Closing stdin asks the child to exit; it gets half a second before SIGKILL.
    void shutdown() {
        if (in_fd_ >= 0) ::close(in_fd_);
        if (out_fd_ >= 0) ::close(out_fd_);
        in_fd_ = out_fd_ = -1;
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                    pid_ = -1;
                    return;
                }
                ::usleep(10000);
            }
            ::kill(-pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }

    std::string read_line() {
        const auto deadline = std::chrono::steady_clock::now() + timeout_;
        for (;;) {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
                auto line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw ScorerError("scorer timed out");
            pollfd pfd{out_fd_, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (ready < 0 && errno == EINTR) continue;
            if (ready <= 0) throw ScorerError("scorer timed out");
            char chunk[4096];
            const auto n = ::read(out_fd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw ScorerError("scorer closed its output");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
    std::string buffer_;
    std::chrono::milliseconds timeout_;
};

class ExternalPairScorer final : public PairScorer {
public:
    explicit ExternalPairScorer(ScorerProcess& process) : process_(process) {}

    std::vector<double> score(std::span<const PairInput> inputs) override {
        std::vector<double> out;
        out.reserve(inputs.size());
        for (const auto& in : inputs)
            out.push_back(parse_pair_response(process_.exchange(pair_request(in.doc_id, in.query_text, in.doc_text)),
                                              in.doc_id));
        return out;
    }

private:
    ScorerProcess& process_;
};

class ExternalListwiseScorer final : public ListwiseScorer {
public:
    ExternalListwiseScorer(ScorerProcess& process, std::size_t max_candidates)
        : process_(process), max_candidates_(max_candidates) {}

    std::vector<std::string> order(const std::string& query, std::span<const ListCandidate> candidates) override {
        if (candidates.size() > max_candidates_)
            throw ScorerError("listwise request of " + std::to_string(candidates.size()) + " candidates exceeds max " +
                              std::to_string(max_candidates_));
        return parse_listwise_response(process_.exchange(listwise_request(query, candidates)));
    }

private:
    ScorerProcess& process_;
    std::size_t max_candidates_;
};

}  // namespace xdnr
