// xdnr: command-line front end. Each subcommand wraps one engine operation.
// Exit codes: 0 ok, 1 usage, 2 data, 3 external scorer.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xdnr/xdnr.hpp"

using namespace xdnr;
namespace fs = std::filesystem;
using json = detail::json;

namespace {

void log(const std::string& msg) { std::cerr << "xdnr: " << msg << '\n'; }

void emit(const json& j) { std::cout << j.dump() << '\n'; }

// Options shared by every subcommand.
struct Common {
    std::string out_dir;
    unsigned threads = 1;
    std::uint64_t seed = 42;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out-dir", c.out_dir, "Directory receiving config.json (and command artifacts)");
    sub->add_option("--threads", c.threads, "Upper bound on worker threads")->capture_default_str();
    sub->add_option("--seed", c.seed, "Random seed (XDNR_SEED overrides)")->capture_default_str();
}

RunConfig start(const std::string& command, const Common& c, std::map<std::string, std::string> paths) {
    if (c.threads < 1) throw UsageError("--threads must be >= 1");
    RunConfig cfg;
    cfg.command = command;
    for (auto it = paths.begin(); it != paths.end();) it = it->second.empty() ? paths.erase(it) : std::next(it);
    cfg.paths = std::move(paths);
    cfg.seed = effective_seed(c.seed);
    cfg.threads = c.threads;
    cfg.output_dir = c.out_dir;
    return cfg;
}

// Inputs are validated before any work; keys starting with "out" are outputs.
void check_inputs(const RunConfig& cfg) {
    std::string missing;
    for (const auto& [key, path] : cfg.paths) {
        if (key.rfind("out", 0) == 0) continue;
        if (!fs::exists(path)) missing += (missing.empty() ? "" : ", ") + ("--" + key + " " + path);
    }
    if (!missing.empty()) throw DataError("input not found: " + missing);
}

void finish_config(const RunConfig& cfg) {
    check_inputs(cfg);
    echo_config(cfg);
}

std::vector<QueryClaim> select_queries(const QuerySet& queries, const std::string& subset, const std::string& qrels_path,
                                       const std::string& debunks_path, const std::string& splits_path) {
    std::vector<QueryClaim> out;
    if (subset == "all") {
        out.assign(queries.begin(), queries.end());
        return out;
    }
    if (splits_path.empty() || qrels_path.empty() || debunks_path.empty())
        throw UsageError("--subset " + subset + " needs --splits, --qrels and --debunks");
    const auto debunks = load_debunks(debunks_path);
    auto in = detail::open_input(qrels_path);
    const auto judgments = read_judgments(in, qrels_path, queries, debunks);
    const auto parts = split(queries, judgments, load_split_spec(splits_path));
    const QueryIds* ids = subset == "test" ? &parts.test : subset == "train" ? &parts.train
                          : subset == "validation"   ? &parts.validation
                                                     : nullptr;
    if (!ids) throw UsageError("unknown --subset \"" + subset + "\" (all, train, validation, test)");
    for (const auto& id : *ids) out.push_back(queries.at(id));
    return out;
}

// ---------------------------------------------------------------------------

struct ValidateData {
    Common common;
    std::string debunks, queries, qrels, splits;
    std::size_t negatives = 10;

    void run() {
        auto cfg = start("validate-data", common, {{"debunks", debunks}, {"queries", queries}, {"qrels", qrels}, {"splits", splits}});
        cfg.options["negatives"] = negatives;
        finish_config(cfg);
        const auto data = load_corpus(debunks, queries, qrels);
        const auto counts = count_dataset(data);
        const auto textual =
            std::count_if(data.queries.begin(), data.queries.end(), [](const QueryClaim& q) { return q.textual; });
        json out = {{"queries", counts.queries}, {"textual_queries", textual}, {"debunks", counts.debunks},
                    {"exact", counts.exact},     {"partial", counts.partial},  {"irrelevant", counts.irrelevant}};
        if (!splits.empty()) {
            const auto parts = split(data.queries, data.judgments, load_split_spec(splits));
            QueryIds pool = parts.train;
            pool.insert(pool.end(), parts.validation.begin(), parts.validation.end());
            PairOptions opts;
            opts.negatives_per_query = negatives;
            opts.seed = cfg.seed;
            opts.excluded_positives = &parts.leaked;
            const auto pairs = build_train_pairs(pool, data.judgments, data.debunks, opts);
            out["split"] = {{"train", parts.train.size()},
                            {"validation", parts.validation.size()},
                            {"test", parts.test.size()},
                            {"excluded", parts.excluded.size()},
                            {"leaked_judgments", parts.leaked.size()}};
            out["train_pairs"] = pairs.size();
        }
        emit(out);
    }
};

struct IndexLexical {
    Common common;
    std::string debunks, translations, out;

    void run() {
        auto cfg = start("index-lexical", common, {{"debunks", debunks}, {"translations", translations}, {"out", out}});
        finish_config(cfg);
        const auto corpus = load_debunks(debunks);
        std::optional<Translations> tr;
        if (!translations.empty()) tr = load_translations(translations);
        const auto index = build_index(corpus, tr ? &*tr : nullptr);
        index.save(out);
        log("indexed " + std::to_string(index.doc_count()) + " debunks into " + out);
        emit({{"docs", index.doc_count()}, {"terms", index.term_count()}, {"avg_doc_length", index.avg_doc_length()}});
    }
};

struct EmbedHash {
    Common common;
    std::string input, kind = "debunks", out;
    std::size_t dim = 256;
    bool use_translated = false;

    void run() {
        auto cfg = start("embed-hash", common, {{"input", input}, {"out", out}});
        cfg.options = {{"kind", kind}, {"dim", dim}, {"use_translated", use_translated}};
        finish_config(cfg);
        std::vector<std::pair<std::string, std::string>> records;
        if (kind == "debunks") {
            for (const auto& d : load_debunks(input)) records.emplace_back(d.id, doc_text(d));
        } else if (kind == "queries") {
            for (const auto& q : load_queries(input))
                records.emplace_back(q.id, use_translated && q.text_en ? *q.text_en : q.text);
        } else {
            throw UsageError("--kind must be debunks or queries");
        }
        const auto m = hash_embed_all(records, dim, cfg.seed);
        m.save(out);
        emit({{"rows", m.rows()}, {"dim", m.dim()}});
    }
};

struct IndexDense {
    Common common;
    std::string embeddings, head, out;

    void run() {
        auto cfg = start("index-dense", common, {{"embeddings", embeddings}, {"head", head}, {"out", out}});
        finish_config(cfg);
        auto m = EmbeddingMatrix::load(embeddings);
        std::string checksum;
        if (!head.empty()) {
            const auto h = load_checkpoint(head);
            m = apply_projection(m, h);
            checksum = h.checksum();
        }
        const DenseIndex index(m);
        if (index.zero_norm_rows()) log(std::to_string(index.zero_norm_rows()) + " zero-norm rows will never be retrieved");
        m.save(out);
        json j = {{"rows", m.rows()}, {"dim", m.dim()}, {"zero_norm_rows", index.zero_norm_rows()}};
        if (!checksum.empty()) j["projection_sha256"] = checksum;
        emit(j);
    }
};

struct Train {
    Common common;
    std::string debunks, queries, qrels, splits, query_embeddings, debunk_embeddings, out;
    TrainConfig train;
    std::string init = "auto";
    std::size_t negatives = 10;
    bool include_irrelevant = false;

    void run() {
        auto cfg = start("train", common,
                         {{"debunks", debunks}, {"queries", queries}, {"qrels", qrels}, {"splits", splits},
                          {"query-embeddings", query_embeddings}, {"debunk-embeddings", debunk_embeddings}, {"out", out}});
        train.init = parse_head_init(init);
        train.seed = cfg.seed;
        train.check();
        cfg.train = train;
        cfg.options = {{"negatives", negatives}, {"include_judged_irrelevant", include_irrelevant}};
        finish_config(cfg);

        const auto data = load_corpus(debunks, queries, qrels);
        const auto parts = split(data.queries, data.judgments, load_split_spec(splits));
        PairOptions opts;
        opts.negatives_per_query = negatives;
        opts.label_map = train.label_map;
        opts.seed = cfg.seed;
        opts.include_judged_irrelevant = include_irrelevant;
        opts.excluded_positives = &parts.leaked;
        const auto pairs = build_train_pairs(parts.train, data.judgments, data.debunks, opts);
        ValidationSet validation{parts.validation, {}, Qrels(data.judgments)};
        if (!parts.validation.empty())
            validation.pairs = build_train_pairs(parts.validation, data.judgments, data.debunks, opts);
        log("training on " + std::to_string(pairs.size()) + " pairs from " + std::to_string(parts.train.size()) +
            " queries; validating on " + std::to_string(parts.validation.size()));

        const auto qv = EmbeddingMatrix::load(query_embeddings);
        const auto dv = EmbeddingMatrix::load(debunk_embeddings);
        std::unique_ptr<std::ofstream> losses;
        if (!common.out_dir.empty()) losses = std::make_unique<std::ofstream>(detail::open_output(fs::path(common.out_dir) / "losses.jsonl"));
        const auto result = xdnr::train(qv, dv, pairs, train, validation, [&](const LossReport& r) {
            log("epoch " + std::to_string(r.epoch) + " train_loss " + std::to_string(r.train_loss) + " val_mrr " +
                std::to_string(r.validation_mrr));
            if (losses) *losses << to_json(r).dump() << '\n';
        });
        save_checkpoint(out, result.head, train);
        json reports = json::array();
        for (const auto& r : result.reports) reports.push_back(to_json(r));
        emit({{"pairs", pairs.size()}, {"checksum", result.head.checksum()}, {"reports", reports}});
    }
};

// Stage-1 ranker assembled from search/bench flags.
struct Stage1Options {
    std::string method = "bm25";
    std::string index, translations, debunk_embeddings, dense_index, query_embeddings, head;
    std::size_t hash_dim = 0;
    bool use_translated = false;
    Bm25Params bm25;

    void add(CLI::App* sub) {
        sub->add_option("--method", method, "bm25 or dense")->capture_default_str();
        sub->add_option("--index", index, "Lexical index file (bm25)");
        sub->add_option("--debunk-embeddings", debunk_embeddings, "Raw debunk embeddings (dense); --head applies to both sides");
        sub->add_option("--dense-index", dense_index, "Debunk embeddings already projected by index-dense");
        sub->add_option("--query-embeddings", query_embeddings, "Precomputed query embeddings (dense)");
        sub->add_option("--hash-dim", hash_dim, "Embed queries with the feature-hashing embedder of this dim (dense)");
        sub->add_option("--head", head, "Projection head checkpoint (dense)");
        sub->add_flag("--use-translated", use_translated, "Use text_en for queries when present");
        sub->add_option("--k1", bm25.k1, "BM25 k1")->capture_default_str();
        sub->add_option("--b", bm25.b, "BM25 b")->capture_default_str();
    }

    std::map<std::string, std::string> paths() const {
        return {{"index", index}, {"debunk-embeddings", debunk_embeddings}, {"dense-index", dense_index},
                {"query-embeddings", query_embeddings}, {"head", head}};
    }

    void record(RunConfig& cfg) const {
        cfg.pipeline = method;
        cfg.bm25 = bm25;
        cfg.options["hash_dim"] = hash_dim;
        cfg.options["use_translated"] = use_translated;
    }

    // Owns whatever the ranker references.
    struct Built {
        std::unique_ptr<InvertedIndex> lexical;
        std::unique_ptr<DenseIndex> dense;
        std::unique_ptr<EmbeddingMatrix> query_vectors;
        std::unique_ptr<ProjectionHead> projection;
        std::unique_ptr<Stage1Ranker> ranker;
    };

    Built build(std::uint64_t seed) const {
        Built b;
        if (method == "bm25") {
            if (index.empty()) throw UsageError("--method bm25 needs --index");
            b.lexical = std::make_unique<InvertedIndex>(InvertedIndex::load(index));
            b.ranker = std::make_unique<LexicalRanker>(*b.lexical, bm25, use_translated);
            return b;
        }
        if (method != "dense") throw UsageError("--method must be bm25 or dense");
        if (debunk_embeddings.empty() == dense_index.empty())
            throw UsageError("--method dense needs exactly one of --debunk-embeddings, --dense-index");
        if (query_embeddings.empty() == (hash_dim == 0))
            throw UsageError("--method dense needs exactly one of --query-embeddings, --hash-dim");
        if (!head.empty()) b.projection = std::make_unique<ProjectionHead>(load_checkpoint(head));
        auto docs = EmbeddingMatrix::load(debunk_embeddings.empty() ? dense_index : debunk_embeddings);
        if (b.projection && !debunk_embeddings.empty()) docs = apply_projection(docs, *b.projection);
        b.dense = std::make_unique<DenseIndex>(std::move(docs));
        QueryEncoder encoder;
        std::string name = "dense";
        if (hash_dim) {
            encoder = hash_encoder(hash_dim, seed);
            name = "dense(hash" + std::to_string(hash_dim) + ")";
        } else {
            b.query_vectors = std::make_unique<EmbeddingMatrix>(EmbeddingMatrix::load(query_embeddings));
            encoder = lookup_encoder(*b.query_vectors);
        }
        if (use_translated && hash_dim) {
            encoder = [dim = hash_dim, seed](const QueryClaim& q) { return hash_embed(q.text_en ? *q.text_en : q.text, dim, seed); };
        }
        if (b.projection) name += "+head";
        b.ranker = std::make_unique<DenseRanker>(*b.dense, encoder, name, b.projection.get());
        return b;
    }
};

struct Search {
    Common common;
    Stage1Options stage1;
    std::string queries, out, subset = "all", splits, qrels, debunks;
    std::size_t top_k = 100;

    void run() {
        auto paths = stage1.paths();
        paths.insert({{"queries", queries}, {"splits", splits}, {"qrels", qrels}, {"debunks", debunks}, {"out", out}});
        auto cfg = start("search", common, paths);
        stage1.record(cfg);
        cfg.rerank.top_k_stage1 = top_k;
        cfg.options["subset"] = subset;
        if (top_k < 1) throw UsageError("--top-k must be >= 1");
        stage1.bm25.check();
        finish_config(cfg);
        const auto qs = select_queries(load_queries(queries), subset, qrels, debunks, splits);
        const auto built = stage1.build(cfg.seed);

        std::vector<RankedList> run(qs.size());
        std::vector<std::jthread> pool;
        const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(std::max<std::size_t>(1, qs.size()))));
        const std::size_t chunk = (qs.size() + threads - 1) / threads;
        std::vector<std::exception_ptr> errors(threads);
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t * chunk; i < std::min(qs.size(), (t + 1) * chunk); ++i)
                        run[i] = built.ranker->search(qs[i], top_k);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        pool.clear();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        save_run(out, run);
        log("wrote " + std::to_string(run.size()) + " rankings to " + out);
        emit({{"queries", run.size()}, {"stage_tag", built.ranker->tag()}});
    }
};

struct Rerank {
    Common common;
    std::string queries, debunks, run_path, out, scorer = "passthrough", qrels, scorer_cmd;
    std::size_t depth = 20, top_k = 100, max_candidates = 20;
    long timeout_ms = 30000;
    bool fallback = false;

    void run() {
        auto cfg = start("rerank", common, {{"queries", queries}, {"debunks", debunks}, {"run", run_path}, {"qrels", qrels}, {"out", out}});
        cfg.rerank = {top_k, depth, parse_scorer_kind(scorer)};
        cfg.rerank.check();
        cfg.pipeline = scorer;
        cfg.options = {{"scorer_cmd", scorer_cmd}, {"timeout_ms", timeout_ms}, {"max_candidates", max_candidates}, {"fallback", fallback}};
        const auto kind = cfg.rerank.scorer;
        if (kind == ScorerKind::OracleQrels && qrels.empty()) throw UsageError("--scorer oracle needs --qrels");
        if ((kind == ScorerKind::ExternalPair || kind == ScorerKind::ExternalListwise) && scorer_cmd.empty())
            throw UsageError("--scorer " + scorer + " needs --scorer-cmd");
        if (timeout_ms < 1) throw UsageError("--timeout-ms must be >= 1");
        finish_config(cfg);

        const auto qs = load_queries(queries);
        const auto corpus = load_debunks(debunks);
        const auto stage1 = load_run(run_path);
        std::optional<Qrels> gold;
        if (!qrels.empty()) gold = Qrels::load(qrels);

        std::unique_ptr<ScorerProcess> process;
        std::unique_ptr<PairScorer> pair;
        std::unique_ptr<ListwiseScorer> listwise;
        std::unique_ptr<Reranker> reranker;
        switch (kind) {
            case ScorerKind::PassThrough: reranker = std::make_unique<PassThroughReranker>(); break;
            case ScorerKind::OracleQrels: reranker = std::make_unique<OracleQrelsReranker>(*gold); break;
            case ScorerKind::ExternalPair:
                process = std::make_unique<ScorerProcess>(scorer_cmd, std::chrono::milliseconds(timeout_ms));
                pair = std::make_unique<ExternalPairScorer>(*process);
                reranker = std::make_unique<PairReranker>(*pair, corpus);
                break;
            case ScorerKind::ExternalListwise:
                process = std::make_unique<ScorerProcess>(scorer_cmd, std::chrono::milliseconds(timeout_ms));
                listwise = std::make_unique<ExternalListwiseScorer>(*process, max_candidates);
                reranker = std::make_unique<ListwiseReranker>(*listwise, corpus);
                break;
        }

        std::vector<RankedList> result;
        std::size_t repaired = 0, fell_back = 0;
        for (auto list : stage1) {
            if (list.entries.size() > top_k) list.entries.resize(top_k);
            try {
                auto r = xdnr::rerank(qs.at(list.query_id), list, cfg.rerank, *reranker);
                repaired += r.repaired;
                result.push_back(std::move(r.ranking));
            } catch (const ScorerError& e) {
                if (!fallback) throw;
                log(std::string("query ") + list.query_id + ": " + e.what() + "; keeping stage-1 ranking");
                ++fell_back;
                result.push_back(e.stage1());
            }
        }
        save_run(out, result);
        emit({{"queries", result.size()}, {"repaired", repaired}, {"fallbacks", fell_back}});
    }
};

struct Evaluate {
    Common common;
    std::string run_path, qrels, queries, format = "json";
    bool per_query = false;

    void run() {
        auto cfg = start("evaluate", common, {{"run", run_path}, {"qrels", qrels}, {"queries", queries}});
        cfg.options = {{"format", format}, {"per_query", per_query}};
        if (format != "json" && format != "table") throw UsageError("--format must be json or table");
        finish_config(cfg);
        const auto run = load_run(run_path);
        const auto gold = Qrels::load(qrels);
        std::unordered_map<std::string, std::string> langs;
        if (!queries.empty())
            for (const auto& q : load_queries(queries)) langs[q.id] = q.lang;
        const auto report = evaluate(run, gold, langs);
        if (format == "table") {
            std::cout << to_table(report);
            return;
        }
        auto j = to_json(report);
        if (!per_query) j.erase("per_query");
        emit(j);
    }
};

struct Candidates {
    Common common;
    std::string embeddings, out;
    std::size_t depth = 7;
    double threshold = 0.6;

    void run() {
        auto cfg = start("candidates", common, {{"embeddings", embeddings}, {"out", out}});
        cfg.options = {{"depth", depth}, {"threshold", threshold}};
        if (depth < 1) throw UsageError("--depth must be >= 1");
        finish_config(cfg);
        const auto pairs = candidate_pairs(EmbeddingMatrix::load(embeddings), depth, threshold);
        auto file = detail::open_output(out);
        write_candidate_pairs(file, pairs);
        emit({{"pairs", pairs.size()}});
    }
};

// Texts of a JSONL file: "text" (or "text_en" with --use-translated) when present, else claim + title.
std::vector<std::string> read_texts(const std::string& path, bool translated) {
    std::vector<std::string> texts;
    detail::for_each_jsonl(fs::path(path), [&](const json& obj, std::size_t line_no) {
        const auto loc = detail::where(path, line_no);
        if (translated && obj.contains("text_en")) texts.push_back(detail::get_string(obj, "text_en", loc));
        else if (obj.contains("text")) texts.push_back(detail::get_string(obj, "text", loc));
        else if (obj.contains("claim") || obj.contains("title"))
            texts.push_back(doc_text({"", "", obj.value("claim", ""), obj.value("title", ""), {}, {}}));
        else throw DataError(loc + ": record has no text, claim or title");
    });
    return texts;
}

struct Overlap {
    Common common;
    std::string test, train;
    bool use_translated = false;

    void run() {
        auto cfg = start("overlap", common, {{"test", test}, {"train", train}});
        cfg.options["use_translated"] = use_translated;
        finish_config(cfg);
        emit({{"overlap", domain_overlap(read_texts(test, use_translated), read_texts(train, use_translated))}});
    }
};

struct Kappa {
    Common common;
    std::string counts;
    long raters = 0;

    void run() {
        auto cfg = start("kappa", common, {{"counts", counts}});
        cfg.options["raters"] = raters;
        finish_config(cfg);
        auto in = detail::open_input(counts);
        const auto table = read_kappa_csv(in, counts);
        if (table.counts.empty()) throw DataError(counts + ": no items");
        long n = raters;
        if (n == 0)
            for (long c : table.counts.front()) n += c;
        emit({{"kappa", fleiss_kappa(table.counts, n)}, {"items", table.counts.size()}, {"raters", n},
              {"categories", table.categories}});
    }
};

struct TimeGap {
    Common common;
    std::string debunks, queries, qrels;
    long bin_days = 30;

    void run() {
        auto cfg = start("timegap", common, {{"debunks", debunks}, {"queries", queries}, {"qrels", qrels}});
        cfg.options["bin_days"] = bin_days;
        finish_config(cfg);
        const auto data = load_corpus(debunks, queries, qrels);
        emit(to_json(time_gap_stats(data.judgments, data.queries, data.debunks, bin_days)));
    }
};

struct Bench {
    Common common;
    Stage1Options stage1;
    std::string queries, qrels, out, tag;
    std::size_t warmup = 1, repeats = 3, top_k = 100, depth = 20, limit = 0;
    bool passthrough = false;

    void run() {
        auto paths = stage1.paths();
        paths.insert({{"queries", queries}, {"qrels", qrels}, {"out", out}});
        auto cfg = start("bench", common, paths);
        stage1.record(cfg);
        cfg.rerank = {top_k, depth, ScorerKind::PassThrough};
        cfg.rerank.check();
        cfg.options["warmup"] = warmup;
        cfg.options["repeats"] = repeats;
        cfg.options["limit"] = limit;
        cfg.options["rerank_passthrough"] = passthrough;
        finish_config(cfg);
        // Setup (index load, embedding load) stays outside the timed loop.
        const auto qs_all = load_queries(queries);
        std::vector<QueryClaim> qs(qs_all.begin(), qs_all.end());
        if (limit && qs.size() > limit) qs.resize(limit);
        std::optional<Qrels> gold;
        if (!qrels.empty()) gold = Qrels::load(qrels);
        const auto built = stage1.build(cfg.seed);
        PassThroughReranker pass;
        std::string name = tag.empty() ? built.ranker->tag() : tag;
        LatencyReport report;
        if (passthrough) {
            if (tag.empty()) name += ">passthrough@K=" + std::to_string(depth);
            report = latency_bench(name, [&](const QueryClaim& q) { return retrieve(q, *built.ranker, cfg.rerank, pass); },
                                   qs, warmup, repeats, gold ? &*gold : nullptr);
        } else {
            report = latency_bench(name, [&](const QueryClaim& q) { return built.ranker->search(q, top_k); }, qs, warmup,
                                   repeats, gold ? &*gold : nullptr);
        }
        auto j = to_json(report);
        if (!out.empty()) {
            auto file = detail::open_output(out);
            file << j.dump(2) << '\n';
        }
        j.erase("samples");
        emit(j);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xdnr: multilingual retrieval of previously debunked narratives"};
    app.require_subcommand(1);
    app.fallthrough(false);
    std::vector<std::pair<CLI::App*, std::function<void()>>> commands;

    ValidateData vd;
    {
        auto* s = app.add_subcommand("validate-data", "Load the dataset, report counts, split sizes and pair count");
        add_common(s, vd.common);
        s->add_option("--debunks", vd.debunks)->required();
        s->add_option("--queries", vd.queries)->required();
        s->add_option("--qrels", vd.qrels)->required();
        s->add_option("--splits", vd.splits, "Split spec; adds split sizes and training pair count");
        s->add_option("--negatives", vd.negatives)->capture_default_str();
        commands.emplace_back(s, [&] { vd.run(); });
    }
    IndexLexical il;
    {
        auto* s = app.add_subcommand("index-lexical", "Build the BM25 inverted index over debunks");
        add_common(s, il.common);
        s->add_option("--debunks", il.debunks)->required();
        s->add_option("--translations", il.translations, "Index English translations ({id,text_en} JSONL) instead");
        s->add_option("--out", il.out)->required();
        commands.emplace_back(s, [&] { il.run(); });
    }
    EmbedHash eh;
    {
        auto* s = app.add_subcommand("embed-hash", "Embed queries or debunks with the feature-hashing embedder");
        add_common(s, eh.common);
        s->add_option("--input", eh.input)->required();
        s->add_option("--kind", eh.kind, "debunks or queries")->capture_default_str();
        s->add_option("--dim", eh.dim)->capture_default_str();
        s->add_flag("--use-translated", eh.use_translated, "Queries: embed text_en when present");
        s->add_option("--out", eh.out)->required();
        commands.emplace_back(s, [&] { eh.run(); });
    }
    IndexDense id;
    {
        auto* s = app.add_subcommand("index-dense", "Validate debunk embeddings, optionally project them, and save");
        add_common(s, id.common);
        s->add_option("--embeddings", id.embeddings)->required();
        s->add_option("--head", id.head, "Projection head checkpoint");
        s->add_option("--out", id.out)->required();
        commands.emplace_back(s, [&] { id.run(); });
    }
    Train tr;
    {
        auto* s = app.add_subcommand("train", "Train the projection head on the split's training queries");
        add_common(s, tr.common);
        s->add_option("--debunks", tr.debunks)->required();
        s->add_option("--queries", tr.queries)->required();
        s->add_option("--qrels", tr.qrels)->required();
        s->add_option("--splits", tr.splits)->required();
        s->add_option("--query-embeddings", tr.query_embeddings)->required();
        s->add_option("--debunk-embeddings", tr.debunk_embeddings)->required();
        s->add_option("--out", tr.out, "Checkpoint path")->required();
        s->add_option("--epochs", tr.train.epochs)->capture_default_str();
        s->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
        s->add_option("--lr", tr.train.learning_rate)->capture_default_str();
        s->add_option("--warmup", tr.train.warmup_fraction)->capture_default_str();
        s->add_option("--weight-decay", tr.train.weight_decay)->capture_default_str();
        s->add_option("--init", tr.init, "auto, identity or uniform")->capture_default_str();
        s->add_flag("--bias", tr.train.bias, "Add a trainable bias");
        s->add_option("--dim-out", tr.train.dim_out, "Output dim (0 = input dim)")->capture_default_str();
        s->add_option("--validation-depth", tr.train.validation_depth)->capture_default_str();
        s->add_option("--negatives", tr.negatives)->capture_default_str();
        s->add_flag("--include-judged-irrelevant", tr.include_irrelevant);
        commands.emplace_back(s, [&] { tr.run(); });
    }
    Search se;
    {
        auto* s = app.add_subcommand("search", "Stage-1 retrieval (BM25 or dense) for a set of queries");
        add_common(s, se.common);
        se.stage1.add(s);
        s->add_option("--queries", se.queries)->required();
        s->add_option("--top-k", se.top_k)->capture_default_str();
        s->add_option("--subset", se.subset, "all, train, validation or test")->capture_default_str();
        s->add_option("--splits", se.splits);
        s->add_option("--qrels", se.qrels);
        s->add_option("--debunks", se.debunks);
        s->add_option("--out", se.out)->required();
        commands.emplace_back(s, [&] { se.run(); });
    }
    Rerank rr;
    {
        auto* s = app.add_subcommand("rerank", "Re-rank the top K of a stage-1 run");
        add_common(s, rr.common);
        s->add_option("--queries", rr.queries)->required();
        s->add_option("--debunks", rr.debunks)->required();
        s->add_option("--run", rr.run_path, "Stage-1 run JSONL")->required();
        s->add_option("--out", rr.out)->required();
        s->add_option("--scorer", rr.scorer, "passthrough, oracle, pair or listwise")->capture_default_str();
        s->add_option("--depth", rr.depth, "Re-rank depth K")->capture_default_str();
        s->add_option("--top-k", rr.top_k, "Stage-1 candidates kept")->capture_default_str();
        s->add_option("--qrels", rr.qrels, "Judgments for --scorer oracle");
        s->add_option("--scorer-cmd", rr.scorer_cmd, "External scorer command (run via /bin/sh)");
        s->add_option("--timeout-ms", rr.timeout_ms)->capture_default_str();
        s->add_option("--max-candidates", rr.max_candidates, "Listwise request size limit")->capture_default_str();
        s->add_flag("--fallback", rr.fallback, "Keep the stage-1 ranking when the scorer fails");
        commands.emplace_back(s, [&] { rr.run(); });
    }
    Evaluate ev;
    {
        auto* s = app.add_subcommand("evaluate", "MRR, nDCG@1 and nDCG@5 of a run");
        add_common(s, ev.common);
        s->add_option("--run", ev.run_path)->required();
        s->add_option("--qrels", ev.qrels)->required();
        s->add_option("--queries", ev.queries, "Queries file for the per-language breakdown");
        s->add_option("--format", ev.format, "json or table")->capture_default_str();
        s->add_flag("--per-query", ev.per_query);
        commands.emplace_back(s, [&] { ev.run(); });
    }
    Candidates ca;
    {
        auto* s = app.add_subcommand("candidates", "Nearest-neighbour claim pairs for annotation");
        add_common(s, ca.common);
        s->add_option("--embeddings", ca.embeddings)->required();
        s->add_option("--depth", ca.depth)->capture_default_str();
        s->add_option("--threshold", ca.threshold)->capture_default_str();
        s->add_option("--out", ca.out)->required();
        commands.emplace_back(s, [&] { ca.run(); });
    }
    Overlap ov;
    {
        auto* s = app.add_subcommand("overlap", "Weighted-Jaccard domain overlap of two text collections");
        add_common(s, ov.common);
        s->add_option("--test", ov.test)->required();
        s->add_option("--train", ov.train)->required();
        s->add_flag("--use-translated", ov.use_translated);
        commands.emplace_back(s, [&] { ov.run(); });
    }
    Kappa ka;
    {
        auto* s = app.add_subcommand("kappa", "Fleiss kappa of an annotation count table");
        add_common(s, ka.common);
        s->add_option("--counts", ka.counts)->required();
        s->add_option("--raters", ka.raters, "Raters per item (default: first row sum)");
        commands.emplace_back(s, [&] { ka.run(); });
    }
    TimeGap tg;
    {
        auto* s = app.add_subcommand("timegap", "Gap between debunk publication and query posting");
        add_common(s, tg.common);
        s->add_option("--debunks", tg.debunks)->required();
        s->add_option("--queries", tg.queries)->required();
        s->add_option("--qrels", tg.qrels)->required();
        s->add_option("--bin-days", tg.bin_days)->capture_default_str();
        commands.emplace_back(s, [&] { tg.run(); });
    }
    Bench be;
    {
        auto* s = app.add_subcommand("bench", "Per-query latency of a retrieval pipeline");
        add_common(s, be.common);
        be.stage1.add(s);
        s->add_option("--queries", be.queries)->required();
        s->add_option("--qrels", be.qrels);
        s->add_option("--warmup", be.warmup)->capture_default_str();
        s->add_option("--repeats", be.repeats)->capture_default_str();
        s->add_option("--top-k", be.top_k)->capture_default_str();
        s->add_option("--depth", be.depth)->capture_default_str();
        s->add_option("--limit", be.limit, "Benchmark only the first N queries");
        s->add_flag("--rerank-passthrough", be.passthrough, "Time stage 1 followed by a pass-through re-rank");
        s->add_option("--tag", be.tag, "Model tag in the report");
        s->add_option("--out", be.out, "Full report including samples");
        commands.emplace_back(s, [&] { be.run(); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "xdnr: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        for (auto& [sub, fn] : commands)
            if (sub->parsed()) fn();
        return 0;
    } catch (const ScorerError& e) {
        log(e.what());
        return 3;
    } catch (const UsageError& e) {
        log(std::string("usage error: ") + e.what());
        return 1;
    } catch (const DataError& e) {
        log(std::string("data error: ") + e.what());
        return 2;
    } catch (const TrainingError& e) {
        log(std::string("training error: ") + e.what());
        return 2;
    } catch (const std::exception& e) {
        log(std::string("error: ") + e.what());
        return 2;
    }
}
