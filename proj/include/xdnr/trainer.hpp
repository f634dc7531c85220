#pragma once

// Bi-encoder fine-tuning of a shared projection head over frozen embeddings.
// Objective: mean squared error between the graded label and the cosine of the
// two projected vectors, optimized with AdamW under a linear warmup/decay schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "xdnr/corpus.hpp"
#include "xdnr/dense_index.hpp"
#include "xdnr/detail/io.hpp"
#include "xdnr/detail/random.hpp"
#include "xdnr/error.hpp"
#include "xdnr/metrics.hpp"
#include "xdnr/projection_head.hpp"

namespace xdnr {

/// One (query vector, document vector, label) sample, viewing external storage.
struct PairSample {
    std::span<const double> query;
    std::span<const double> doc;
    double label;
};

/// Gradient with the same layout as ProjectionHead's parameters.
struct HeadGradient {
    std::vector<double> weights;
    std::optional<std::vector<double>> bias;

    double max_abs() const {
        double m = 0.0;
        for (double g : weights) m = std::max(m, std::abs(g));
        if (bias)
            for (double g : *bias) m = std::max(m, std::abs(g));
        return m;
    }
};

namespace detail {

struct ProjectedPair {
    std::vector<double> a, c;
    double na, nc, cos;
};

inline ProjectedPair project_pair(const ProjectionHead& head, const PairSample& s, std::size_t index) {
    ProjectedPair p{head.forward(s.query), head.forward(s.doc), 0.0, 0.0, 0.0};
    p.na = l2_norm(p.a);
    p.nc = l2_norm(p.c);
    if (p.na == 0.0 || p.nc == 0.0)
        throw TrainingError("projected zero-norm vector at batch index " + std::to_string(index));
    p.cos = dot(p.a, p.c) / (p.na * p.nc);
    return p;
}

inline void check_batch(const ProjectionHead& head, std::span<const PairSample> batch) {
    if (batch.empty()) throw UsageError("empty batch");
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        if (s.query.size() != head.dim_in || s.doc.size() != head.dim_in)
            throw UsageError("sample " + std::to_string(i) + " does not match head input dim");
        if (!(s.label >= 0.0 && s.label <= 1.0))
            throw UsageError("sample " + std::to_string(i) + " label outside [0, 1]");
    }
}

}  // namespace detail

/// L = (1/N) sum_i (y_i - cos(h(q_i), h(d_i)))^2
inline double loss(const ProjectionHead& head, std::span<const PairSample> batch) {
    detail::check_batch(head, batch);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto p = detail::project_pair(head, batch[i], i);
        const double r = batch[i].label - p.cos;
        sum += r * r;
    }
    return sum / static_cast<double>(batch.size());
}

/// Loss and its exact gradient. The head appears on both sides of every cosine,
/// so each sample contributes through both projected vectors:
///   dcos/da = c/(|a||c|) - cos a/|a|^2,  dcos/dc = a/(|a||c|) - cos c/|c|^2
///   dL/dW  += (dL/da) q^T + (dL/dc) d^T,  dL/db += dL/da + dL/dc
inline double loss_and_grad(const ProjectionHead& head, std::span<const PairSample> batch, HeadGradient& grad) {
    detail::check_batch(head, batch);
    grad.weights.assign(head.weights.size(), 0.0);
    if (head.bias) grad.bias.emplace(head.dim_out, 0.0);
    else grad.bias.reset();

    const double n = static_cast<double>(batch.size());
    std::vector<double> ga(head.dim_out), gc(head.dim_out);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        const auto p = detail::project_pair(head, s, i);
        const double r = s.label - p.cos;
        sum += r * r;
        const double dl_dcos = -2.0 * r / n;
        const double inv = 1.0 / (p.na * p.nc);
        const double ka = p.cos / (p.na * p.na), kc = p.cos / (p.nc * p.nc);
        for (std::size_t o = 0; o < head.dim_out; ++o) {
            ga[o] = dl_dcos * (p.c[o] * inv - ka * p.a[o]);
            gc[o] = dl_dcos * (p.a[o] * inv - kc * p.c[o]);
        }
        for (std::size_t o = 0; o < head.dim_out; ++o) {
            double* row = grad.weights.data() + o * head.dim_in;
            for (std::size_t k = 0; k < head.dim_in; ++k) row[k] += ga[o] * s.query[k] + gc[o] * s.doc[k];
        }
        if (grad.bias)
            for (std::size_t o = 0; o < head.dim_out; ++o) (*grad.bias)[o] += ga[o] + gc[o];
    }
    return sum / n;
}

inline HeadGradient loss_grad(const ProjectionHead& head, std::span<const PairSample> batch) {
    HeadGradient g;
    loss_and_grad(head, batch, g);
    return g;
}

// ---------------------------------------------------------------------------
// Configuration and optimizer

enum class HeadInit { Auto, Identity, Uniform };

inline const char* to_string(HeadInit init) {
    switch (init) {
        case HeadInit::Auto: return "auto";
        case HeadInit::Identity: return "identity";
        case HeadInit::Uniform: return "uniform";
    }
    return "?";
}

inline HeadInit parse_head_init(std::string_view s) {
    if (s == "auto") return HeadInit::Auto;
    if (s == "identity") return HeadInit::Identity;
    if (s == "uniform") return HeadInit::Uniform;
    throw UsageError("unknown head init \"" + std::string(s) + "\"");
}

struct TrainConfig {
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    double learning_rate = 4e-5;
    double warmup_fraction = 0.1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 42;
    LabelMap label_map{};
    HeadInit init = HeadInit::Auto;
    bool bias = false;
    // 0 means dim_out = dim_in.
    std::size_t dim_out = 0;
    // Depth of the dense search used for validation MRR.
    std::size_t validation_depth = 100;

    void check() const {
        if (epochs < 1) throw UsageError("epochs must be >= 1");
        if (batch_size < 1) throw UsageError("batch_size must be >= 1");
        if (!(learning_rate >= 0.0)) throw UsageError("learning_rate must be >= 0");
        if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw UsageError("warmup fraction must lie in [0, 1]");
        if (validation_depth < 1) throw UsageError("validation_depth must be >= 1");
    }
};

inline detail::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"warmup_fraction", c.warmup_fraction},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"seed", c.seed},
            {"label_map", {{"exact", c.label_map.exact}, {"partial", c.label_map.partial}, {"negative", c.label_map.negative}}},
            {"init", to_string(c.init)},
            {"bias", c.bias},
            {"dim_out", c.dim_out},
            {"validation_depth", c.validation_depth}};
}

/// Linear warmup to the peak rate, then linear decay to zero (step is 0-based).
inline double scheduled_rate(const TrainConfig& c, std::size_t step, std::size_t total_steps) {
    const auto warmup = static_cast<std::size_t>(c.warmup_fraction * static_cast<double>(total_steps));
    if (step < warmup) return c.learning_rate * static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, warmup));
    const double remaining = static_cast<double>(total_steps - std::min(step, total_steps));
    return c.learning_rate * std::max(0.0, remaining / static_cast<double>(std::max<std::size_t>(1, total_steps - warmup)));
}

/// AdamW with bias correction and decoupled weight decay over the flattened head.
class AdamW {
public:
    AdamW(const TrainConfig& config, std::size_t parameter_count)
        : beta1_(config.beta1), beta2_(config.beta2), eps_(config.epsilon), decay_(config.weight_decay),
          m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

    void step(ProjectionHead& head, const HeadGradient& grad, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t k = 0;
        auto update = [&](std::vector<double>& params, const std::vector<double>& g) {
            for (std::size_t i = 0; i < params.size(); ++i, ++k) {
                m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[i];
                v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m_[k] / c1, vhat = v_[k] / c2;
                params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + decay_ * params[i]);
            }
        };
        update(head.weights, grad.weights);
        if (head.bias) update(*head.bias, *grad.bias);
    }

private:
    double beta1_, beta2_, eps_, decay_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

inline ProjectionHead init_head(std::size_t dim_in, const TrainConfig& config) {
    const std::size_t dim_out = config.dim_out ? config.dim_out : dim_in;
    HeadInit init = config.init;
    if (init == HeadInit::Auto) init = dim_out == dim_in ? HeadInit::Identity : HeadInit::Uniform;
    ProjectionHead head;
    if (init == HeadInit::Identity) {
        if (dim_out != dim_in) throw UsageError("identity init needs dim_out == dim_in");
        head = ProjectionHead::identity(dim_in);
    } else {
        head.dim_in = dim_in;
        head.dim_out = dim_out;
        head.weights.resize(dim_in * dim_out);
        detail::Rng rng(detail::mix64(config.seed ^ 0x1417ULL));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dim_in));
        for (double& w : head.weights) w = (2.0 * detail::uniform_unit(rng) - 1.0) * scale;
    }
    if (config.bias) head.bias.emplace(dim_out, 0.0);
    return head;
}

// ---------------------------------------------------------------------------
// Training loop

struct ValidationSet {
    QueryIds query_ids;
    std::vector<TrainPair> pairs;
    Qrels qrels;
};

struct LossReport {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_mrr = 0.0;
};

inline detail::json to_json(const LossReport& r) {
    return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"validation_loss", r.validation_loss},
            {"validation_mrr", r.validation_mrr}};
}

struct TrainResult {
    ProjectionHead head;
    std::vector<LossReport> reports;
};

namespace detail {

inline std::vector<PairSample> resolve_pairs(const std::vector<TrainPair>& pairs, const EmbeddingMatrix& queries,
                                             const EmbeddingMatrix& debunks) {
    std::vector<PairSample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        auto q = queries.find(p.query_id);
        if (!q) throw DataError("training pair references query without embedding: \"" + p.query_id + "\"");
        auto d = debunks.find(p.debunk_id);
        if (!d) throw DataError("training pair references debunk without embedding: \"" + p.debunk_id + "\"");
        out.push_back({queries.row(*q), debunks.row(*d), p.label});
    }
    return out;
}

}  // namespace detail

/// MRR of the dense ranking produced under `head` for the given queries.
inline double projected_mrr(const ProjectionHead& head, const EmbeddingMatrix& queries, const EmbeddingMatrix& debunks,
                            const QueryIds& query_ids, const Qrels& qrels, std::size_t depth) {
    if (query_ids.empty()) return 0.0;
    const DenseIndex index(apply_projection(debunks, head));
    std::vector<RankedList> run;
    run.reserve(query_ids.size());
    for (const auto& qid : query_ids) {
        const auto v = head.forward(queries.row(qid));
        auto list = dense_search(index, v, depth);
        list.query_id = qid;
        run.push_back(std::move(list));
    }
    return mrr(run, qrels);
}

using EpochCallback = std::function<void(const LossReport&)>;

/// Deterministic under config.seed: fixed init, fixed per-epoch shuffle, sequential reduction.
inline TrainResult train(const EmbeddingMatrix& query_vectors, const EmbeddingMatrix& debunk_vectors,
                         const std::vector<TrainPair>& pairs, const TrainConfig& config,
                         const ValidationSet& validation, const EpochCallback& on_epoch = {}) {
    config.check();
    if (query_vectors.dim() != debunk_vectors.dim()) throw DataError("query and debunk embedding dims differ");
    if (pairs.empty()) throw DataError("no training pairs");
    const auto samples = detail::resolve_pairs(pairs, query_vectors, debunk_vectors);
    const auto val_samples = detail::resolve_pairs(validation.pairs, query_vectors, debunk_vectors);
    for (const auto& qid : validation.query_ids)
        if (!query_vectors.find(qid)) throw DataError("validation query without embedding: \"" + qid + "\"");

    TrainResult result{init_head(query_vectors.dim(), config), {}};
    auto& head = result.head;
    AdamW optimizer(config, head.parameter_count());

    const std::size_t n = samples.size();
    const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    std::vector<std::size_t> order(n);
    std::vector<PairSample> batch;
    batch.reserve(config.batch_size);
    HeadGradient grad;
    detail::Rng rng(config.seed);
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        detail::shuffle(std::span<std::size_t>(order), rng);
        double epoch_sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += config.batch_size, ++step) {
            batch.clear();
            for (std::size_t i = begin; i < std::min(n, begin + config.batch_size); ++i) batch.push_back(samples[order[i]]);
            double batch_loss = 0.0;
            try {
                batch_loss = loss_and_grad(head, batch, grad);
            } catch (const TrainingError& e) {
                throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
            epoch_sum += batch_loss * static_cast<double>(batch.size());
            optimizer.step(head, grad, scheduled_rate(config, step, total_steps));
        }
        LossReport report;
        report.epoch = epoch;
        report.train_loss = epoch_sum / static_cast<double>(n);
        report.validation_loss = val_samples.empty() ? 0.0 : loss(head, val_samples);
        report.validation_mrr = projected_mrr(head, query_vectors, debunk_vectors, validation.query_ids,
                                              validation.qrels, config.validation_depth);
        if (!std::isfinite(report.validation_loss))
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        if (on_epoch) on_epoch(report);
        result.reports.push_back(report);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then one line of base64 over the
// little-endian f32 payload (weights row-major, then bias).

namespace detail {

inline std::string base64_encode(const void* data, std::size_t size) {
    std::string out(4 * ((size + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  static_cast<const unsigned char*>(data), static_cast<int>(size));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw DataError("base64 payload length is not a multiple of 4");
    std::string out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw DataError("invalid base64 payload");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const ProjectionHead& head, const TrainConfig& config) {
    head.check();
    const auto payload = head.to_f32();
    detail::json header = {{"format", "xdnr-head"},
                           {"dim_in", head.dim_in},
                           {"dim_out", head.dim_out},
                           {"bias", head.bias.has_value()},
                           {"seed", config.seed},
                           {"config", to_json(config)},
                           {"checksum", head.checksum()}};
    out << header.dump() << '\n' << detail::base64_encode(payload.data(), payload.size() * sizeof(float)) << '\n';
    if (!out) throw DataError("failed writing checkpoint");
}

inline ProjectionHead read_checkpoint(std::istream& in, const std::string& source) {
    std::string header_line, payload_line;
    if (!std::getline(in, header_line) || !std::getline(in, payload_line))
        throw DataError(source + ": truncated checkpoint");
    detail::json header;
    try {
        header = detail::json::parse(header_line);
    } catch (const detail::json::parse_error& e) {
        throw DataError(source + ": malformed checkpoint header: " + e.what());
    }
    ProjectionHead head;
    std::string checksum;
    try {
        head.dim_in = header.at("dim_in").get<std::size_t>();
        head.dim_out = header.at("dim_out").get<std::size_t>();
        if (header.at("bias").get<bool>()) head.bias.emplace(head.dim_out);
        checksum = header.at("checksum").get<std::string>();
    } catch (const detail::json::exception& e) {
        throw DataError(source + ": " + e.what());
    }
    const auto bytes = detail::base64_decode(payload_line);
    const std::size_t count = head.dim_in * head.dim_out + (head.bias ? head.dim_out : 0);
    if (bytes.size() != count * sizeof(float)) throw DataError(source + ": payload size does not match header");
    std::vector<float> values(count);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    head.weights.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(head.dim_in * head.dim_out));
    if (head.bias) head.bias->assign(values.begin() + static_cast<std::ptrdiff_t>(head.dim_in * head.dim_out), values.end());
    head.check();
    if (head.checksum() != checksum) throw DataError(source + ": checksum mismatch");
    return head;
}

inline void save_checkpoint(const std::filesystem::path& path, const ProjectionHead& head, const TrainConfig& config) {
    auto out = detail::open_output(path, true);
    write_checkpoint(out, head, config);
}

inline ProjectionHead load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_input(path, true);
    return read_checkpoint(in, path.string());
}

}  // namespace xdnr
