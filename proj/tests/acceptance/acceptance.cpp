// Acceptance suite: one PASS/FAIL/SKIP line per criterion; exit status 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures/random_corpus.hpp"
#include "fixtures/separable.hpp"
#include "oracles/oracles.hpp"
#include "xdnr/xdnr.hpp"

using namespace xdnr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Skip {
    std::string reason;
};

// Thrown by require(); carries the first violated expectation.
struct Failed {
    std::string what;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failed{what};
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

RankedList ranking(const std::string& qid, const std::vector<std::string>& ids) {
    RankedList r;
    r.query_id = qid;
    double s = double(ids.size());
    for (const auto& id : ids) r.entries.push_back({id, s--});
    return r;
}

std::vector<std::string> ids_of(const RankedList& r) {
    std::vector<std::string> out;
    for (const auto& e : r.entries) out.push_back(e.id);
    return out;
}

// ---------------------------------------------------------------------------

std::string metric_oracle() {
    const auto t0 = Clock::now();
    std::mt19937 gen(2025);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Qrels qrels;
        std::vector<RankedList> run;
        std::vector<oracle::QueryCase> cases;
        const std::size_t nq = 1 + gen() % 5;
        for (std::size_t q = 0; q < nq; ++q) {
            const std::string qid = "q" + std::to_string(q);
            std::vector<std::string> pool;
            for (int i = 0; i < 30; ++i) pool.push_back("d" + std::to_string(i));
            std::shuffle(pool.begin(), pool.end(), gen);
            std::map<std::string, int> gains;
            for (std::size_t j = 0, n = gen() % 8; j < n; ++j) gains[pool[gen() % pool.size()]] = int(gen() % 3);
            oracle::QueryCase c;
            for (const auto& [id, g] : gains) {
                qrels.set(qid, id, g);
                c.judged.push_back(g);
            }
            std::shuffle(pool.begin(), pool.end(), gen);
            pool.resize(gen() % 16);
            for (const auto& id : pool) c.gains_in_rank.push_back(gains.count(id) ? gains[id] : 0);
            run.push_back(ranking(qid, pool));
            cases.push_back(c);
        }
        worst = std::max(worst, std::abs(mrr(run, qrels) - oracle::mrr(cases)));
        for (std::size_t k : {1u, 3u, 5u, 10u, 100u}) {
            worst = std::max(worst, std::abs(dcg_at_k(run, qrels, k) - oracle::mean_dcg(cases, k)));
            worst = std::max(worst, std::abs(ndcg_at_k(run, qrels, k) - oracle::mean_ndcg(cases, k)));
        }
    }
    const double t = seconds_since(t0);
    require(worst < 1e-9, "max |delta| " + fmt(worst) + " >= 1e-9");
    require(t < 10.0, "runtime " + fmt(t) + " s >= 10 s");
    return "1000 instances, max |delta| " + fmt(worst) + ", " + fmt(t) + " s";
}

std::string hand_fixtures() {
    Qrels a;
    a.set("a", "x", 2);
    a.set("b", "y", 1);
    const double m = mrr({ranking("a", {"x", "p"}), ranking("b", {"p", "r", "s", "y"})}, a);
    require(std::abs(m - 0.625) < 1e-12, "MRR " + fmt(m));
    Qrels g;
    g.set("c", "g2", 2);
    g.set("c", "g1", 1);
    g.set("c", "g0", 0);
    const double d = query_dcg(ranking("c", {"g2", "g0", "g1"}), g, 3);
    require(std::abs(d - 3.5) < 1e-12, "DCG@3 " + fmt(d));
    Qrels n;
    n.set("d", "rel", 2);
    const double nd = query_ndcg(ranking("d", {"other", "rel"}), n, 2);
    require(std::abs(nd - 1.0 / std::log2(3.0)) < 1e-12, "nDCG@2 " + fmt(nd));
    return "MRR 0.625, DCG@3 3.5, nDCG@2 1/log2(3)";
}

std::string bm25_brute_force() {
    std::mt19937 gen(4242);
    double worst = 0.0;
    std::size_t compared = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_docs = 1 + gen() % 200, vocab = 3 + gen() % 60;
        std::vector<std::string> ids;
        std::vector<std::vector<std::string>> docs(n_docs);
        for (std::size_t d = 0; d < n_docs; ++d) {
            ids.push_back("doc" + std::to_string(d));
            for (std::size_t t = 0, len = gen() % 20; t < len; ++t) docs[d].push_back("w" + std::to_string(gen() % vocab));
        }
        const InvertedIndex idx(ids, docs);
        for (int q = 0; q < 5; ++q) {
            std::vector<std::string> query;
            for (std::size_t t = 0, len = 1 + gen() % 5; t < len; ++t) query.push_back("w" + std::to_string(gen() % (vocab + 3)));
            const Bm25Params p;
            const std::size_t k = 1 + gen() % 50;
            const auto got = bm25_search(idx, query, p, k);
            const auto want = oracle::bm25_brute(ids, docs, query, 1.2, 0.75, k);
            require(got.entries.size() == want.size(), "trial " + std::to_string(trial) + ": result size differs");
            for (std::size_t i = 0; i < want.size(); ++i) {
                require(got.entries[i].id == want[i].id, "trial " + std::to_string(trial) + ": ordering differs at rank " +
                                                             std::to_string(i + 1));
                worst = std::max(worst, std::abs(got.entries[i].score - want[i].score));
            }
            compared += want.size();
        }
    }
    require(worst < 1e-9, "max |delta| " + fmt(worst));
    RunConfig cfg;
    cfg.command = "search";
    const auto echo = to_json(cfg);
    require(echo.at("bm25").at("k1").get<double>() == 1.2 && echo.at("bm25").at("b").get<double>() == 0.75,
            "config echo bm25 " + echo.at("bm25").dump());
    return "100 corpora, " + std::to_string(compared) + " scores, max |delta| " + fmt(worst) + ", echo " + echo.at("bm25").dump();
}

std::string gradient_check() {
    std::mt19937 gen(808);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    const int instances = 20;
    for (int trial = 0; trial < instances; ++trial) {
        const std::size_t din = 2 + gen() % 6, dout = 2 + gen() % 5, n = 1 + gen() % 8;
        ProjectionHead head{din, dout, std::vector<double>(din * dout), std::nullopt};
        for (auto& w : head.weights) w = nd(gen);
        if (trial % 2) {
            head.bias.emplace(dout);
            for (auto& b : *head.bias) b = 0.3 * nd(gen);
        }
        std::vector<std::vector<double>> qs(n, std::vector<double>(din)), ds = qs;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < din; ++k) {
                qs[i][k] = nd(gen);
                ds[i][k] = nd(gen);
            }
        std::vector<PairSample> batch;
        for (std::size_t i = 0; i < n; ++i) batch.push_back({qs[i], ds[i], unit(gen)});
        const auto grad = loss_grad(head, batch);
        const double h = 1e-5;
        auto probe = [&](double& param, double analytic) {
            const double saved = param;
            param = saved + h;
            const double up = loss(head, batch);
            param = saved - h;
            const double down = loss(head, batch);
            param = saved;
            const double numeric = (up - down) / (2 * h);
            const double scale = std::max(std::abs(analytic), std::abs(numeric));
            worst = std::max(worst, scale < 1e-6 ? std::abs(analytic - numeric) : std::abs(analytic - numeric) / scale);
        };
        for (std::size_t i = 0; i < head.weights.size(); ++i) probe(head.weights[i], grad.weights[i]);
        if (head.bias)
            for (std::size_t i = 0; i < head.bias->size(); ++i) probe((*head.bias)[i], (*grad.bias)[i]);

        // Zero residual: near-duplicate documents labelled with the loss's own cosine.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < din; ++k) ds[i][k] = qs[i][k] + 0.1 * ds[i][k];
        for (std::size_t i = 0; i < n; ++i) {
            batch[i] = {qs[i], ds[i], 0.0};
            batch[i].label = detail::project_pair(head, batch[i], i).cos;
        }
        const double zero = loss_grad(head, batch).max_abs();
        require(zero == 0.0, "zero-residual gradient max |g| " + fmt(zero) + " on instance " + std::to_string(trial));
    }
    require(worst < 1e-4, "max relative error " + fmt(worst));
    return std::to_string(instances) + " instances, max relative error " + fmt(worst) + ", zero-residual gradient exactly 0";
}

std::string training_sanity() {
    const auto t0 = Clock::now();
    const auto fx = fixture::separable(20, 100, 256, 1);
    const TrainConfig c;
    const auto r1 = train(fx.query_vectors, fx.debunk_vectors, fx.pairs, c, fx.validation);
    require(r1.reports.size() == 4, "expected 4 epoch reports");
    std::string losses;
    for (std::size_t e = 0; e < r1.reports.size(); ++e) {
        losses += (e ? "," : "") + fmt(r1.reports[e].train_loss);
        if (e) require(r1.reports[e].train_loss < r1.reports[e - 1].train_loss, "train loss not strictly decreasing: " + losses);
    }
    const double mrr_final = r1.reports.back().validation_mrr;
    require(mrr_final >= 0.9, "validation MRR " + fmt(mrr_final));
    const auto r2 = train(fx.query_vectors, fx.debunk_vectors, fx.pairs, c, fx.validation);
    std::ostringstream a, b;
    write_checkpoint(a, r1.head, c);
    write_checkpoint(b, r2.head, c);
    require(a.str() == b.str(), "checkpoints differ between same-seed runs");
    const double t = seconds_since(t0);
    require(t < 60.0, "runtime " + fmt(t) + " s");
    return "val MRR " + fmt(mrr_final) + ", losses [" + losses + "], identical checkpoints, " + fmt(t) + " s";
}

std::string multistage_invariants() {
    std::mt19937 gen(2026);
    std::size_t queries = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto c = fixture::random_collection(gen, 100 + gen() % 150, 3, 40 + gen() % 40);
        const auto index = build_index(c.corpus);
        const LexicalRanker bm25(index);
        OracleQrelsReranker oracle_rr(c.qrels);
        const RerankConfig cfg{100, 20, ScorerKind::OracleQrels};
        const std::string where = "pipeline " + std::to_string(trial);
        for (const auto& q : c.queries) {
            const auto s1 = bm25.search(q, cfg.top_k_stage1);
            const auto out = rerank(q, s1, cfg, oracle_rr).ranking;
            require(out.entries.size() == s1.entries.size(), where + ": length changed");
            const auto k = std::min<std::size_t>(cfg.depth, s1.entries.size());
            auto before = ids_of(s1), after = ids_of(out);
            std::sort(before.begin(), before.begin() + long(k));
            std::sort(after.begin(), after.begin() + long(k));
            require(before == after, where + ": depth confinement violated");
            for (std::size_t i = k; i < s1.entries.size(); ++i)
                require(out.entries[i] == s1.entries[i], where + ": tail changed at rank " + std::to_string(i + 1));
            const double n1 = query_ndcg(s1, c.qrels, 5), n2 = query_ndcg(out, c.qrels, 5);
            require(n2 >= n1 - 1e-12, where + ": oracle nDCG@5 " + fmt(n2) + " < stage-1 " + fmt(n1));
            ++queries;
        }
    }
    return "200 pipelines, " + std::to_string(queries) + " queries, K=20";
}

std::string candidate_generation() {
    std::mt19937 gen(77);
    std::normal_distribution<double> nd;
    const std::size_t n = 50, dim = 8;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
    std::vector<double> flat;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("claim" + std::to_string(i));
        const std::size_t centre = gen() % 4;
        for (std::size_t k = 0; k < dim; ++k) {
            rows[i][k] = (k == centre ? 2.5 : 0.0) + nd(gen);
            flat.push_back(rows[i][k]);
        }
    }
    const auto got = candidate_pairs(EmbeddingMatrix(dim, ids, flat), 7, 0.6);
    const auto want = oracle::candidate_pairs(ids, rows, 7, 0.6);
    require(got.size() == want.size(), "pair count " + std::to_string(got.size()) + " vs oracle " + std::to_string(want.size()));
    require(!want.empty() && want.size() < n * 7, "fixture does not exercise the threshold");
    for (std::size_t i = 0; i < want.size(); ++i) {
        require(got[i].source == want[i].source && got[i].target == want[i].target, "pair " + std::to_string(i) + " differs");
        require(std::abs(got[i].similarity - want[i].sim) < 1e-12, "similarity differs at pair " + std::to_string(i));
    }
    return "50 claims, " + std::to_string(got.size()) + " pairs match all-pairs oracle";
}

std::string dataset_conditional() {
    const char* dir = std::getenv("XDNR_DATASET_DIR");
    if (!dir || !*dir) throw Skip{"XDNR_DATASET_DIR not set"};
    const fs::path root(dir);
    const auto data = load_corpus(root / "debunks.jsonl", root / "queries.jsonl", root / "qrels.jsonl");
    const auto counts = count_dataset(data);
    require(counts.queries == 1600, "queries " + std::to_string(counts.queries));
    require(counts.debunks == 30452, "debunks " + std::to_string(counts.debunks));
    require(counts.exact == 2716 && counts.partial == 1542 && counts.irrelevant == 1936,
            "judgments " + std::to_string(counts.exact) + "/" + std::to_string(counts.partial) + "/" +
                std::to_string(counts.irrelevant));
    const auto parts = split(data.queries, data.judgments, load_split_spec(root / "splits.json"));
    const std::size_t train_total = parts.train.size() + parts.validation.size();
    require(parts.test.size() == 400 && train_total == 776,
            "split test " + std::to_string(parts.test.size()) + " train " + std::to_string(train_total));
    QueryIds pool = parts.train;
    pool.insert(pool.end(), parts.validation.begin(), parts.validation.end());
    PairOptions opts;
    opts.excluded_positives = &parts.leaked;
    const auto pairs = build_train_pairs(pool, data.judgments, data.debunks, opts);
    require(pairs.size() == 10120, "train pairs " + std::to_string(pairs.size()));
    const auto gaps = time_gap_stats(data.judgments, data.queries, data.debunks);
    require(std::abs(gaps.median_days - 76.0) <= 2.0, "median gap " + fmt(gaps.median_days));
    require(std::abs(gaps.fraction_debunk_first - 0.223) <= 0.01, "debunk-first " + fmt(gaps.fraction_debunk_first));
    return "counts, split, pairs and time gaps match";
}

std::string latency_harness() {
    // Zipf-distributed vocabulary, claim-length documents.
    std::mt19937 gen(30000);
    const std::size_t n_docs = 30000, vocab = 20000, dim = 256;
    std::vector<double> weights(vocab);
    for (std::size_t i = 0; i < vocab; ++i) weights[i] = 1.0 / double(i + 1);
    std::discrete_distribution<std::size_t> word(weights.begin(), weights.end());
    auto text = [&](std::size_t len) {
        std::string s;
        for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + ("t" + std::to_string(word(gen)));
        return s;
    };
    std::vector<Debunk> docs;
    for (std::size_t i = 0; i < n_docs; ++i) docs.push_back({"d" + std::to_string(i), "en", text(12 + gen() % 20), text(gen() % 10), {}, {}});
    const DebunkCorpus corpus(std::move(docs));
    std::vector<QueryClaim> queries;
    Qrels qrels;
    for (std::size_t i = 0; i < 50; ++i) {
        const std::string qid = "q" + std::to_string(i);
        queries.push_back({qid, "en", text(8 + gen() % 10), {}, {}, true});
        qrels.set(qid, "d" + std::to_string(gen() % n_docs), 2);
    }
    const auto index = build_index(corpus);
    std::vector<std::pair<std::string, std::string>> records;
    for (const auto& d : corpus) records.emplace_back(d.id, doc_text(d));
    const DenseIndex dense_index(hash_embed_all(records, dim, 42));

    const LexicalRanker bm25(index);
    const DenseRanker dense(dense_index, hash_encoder(dim, 42), "dense(hash256)");
    PassThroughReranker pass;
    const RerankConfig cfg{100, 20, ScorerKind::PassThrough};
    const auto r_bm25 = latency_bench(bm25.tag(), [&](const QueryClaim& q) { return bm25.search(q, 100); }, queries, 1, 3, &qrels);
    const auto r_dense = latency_bench(dense.tag(), [&](const QueryClaim& q) { return dense.search(q, 100); }, queries, 1, 3, &qrels);
    const auto r_be_ce = latency_bench(dense.tag() + ">passthrough@K=20",
                                       [&](const QueryClaim& q) { return retrieve(q, dense, cfg, pass); }, queries, 1, 3, &qrels);
    const std::set<std::string> keys{"model_tag", "sample_size", "samples", "p50", "p90", "mean", "mrr"};
    for (const auto* r : {&r_bm25, &r_dense, &r_be_ce}) {
        const auto j = to_json(*r);
        std::set<std::string> got;
        for (const auto& [k, v] : j.items()) got.insert(k);
        require(got == keys, "report keys for " + r->model_tag + ": " + j.dump().substr(0, 120));
        require(r->samples.size() == queries.size() * 3, "sample count for " + r->model_tag);
        require(std::is_sorted(r->samples.begin(), r->samples.end()), "samples not ascending for " + r->model_tag);
        require(r->p50 <= r->p90, "p50 > p90 for " + r->model_tag);
    }
    require(r_bm25.p50 < r_dense.p50, "BM25 p50 " + fmt(r_bm25.p50 * 1e3) + " ms >= dense p50 " + fmt(r_dense.p50 * 1e3) + " ms");
    return "p50 ms: bm25 " + fmt(r_bm25.p50 * 1e3) + ", dense " + fmt(r_dense.p50 * 1e3) + ", dense+passthrough " +
           fmt(r_be_ce.p50 * 1e3);
}

std::string fleiss() {
    const double unanimous = fleiss_kappa({{3, 0, 0}, {0, 3, 0}, {0, 0, 3}, {3, 0, 0}}, 3);
    require(unanimous == 1.0, "unanimous kappa " + fmt(unanimous));
    // P = Pe = 1/2: two unanimous rows (one per category) and two split rows.
    const double chance = fleiss_kappa({{2, 0}, {0, 2}, {1, 1}, {1, 1}}, 2);
    require(std::abs(chance) < 1e-9, "chance-level kappa " + fmt(chance));
    // Three raters, three categories, uniform marginals with P = Pe = 1/3.
    const double chance3 = fleiss_kappa({{3, 0, 0}, {0, 3, 0}, {0, 0, 3}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}}, 3);
    require(std::abs(chance3) < 1e-9, "chance-level kappa (3x3) " + fmt(chance3));
    return "unanimous 1.0, chance-level " + fmt(chance) + " and " + fmt(chance3);
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<std::string()>>> checks{
        {"metric-oracle-equivalence", metric_oracle},
        {"metric-hand-fixtures", hand_fixtures},
        {"bm25-brute-force-equivalence", bm25_brute_force},
        {"gradient-check", gradient_check},
        {"training-sanity", training_sanity},
        {"multistage-invariants", multistage_invariants},
        {"candidate-generation", candidate_generation},
        {"dataset-conditional", dataset_conditional},
        {"latency-harness", latency_harness},
        {"fleiss-kappa", fleiss},
    };
    int failures = 0;
    for (const auto& [name, check] : checks) {
        std::string status, detail;
        try {
            detail = check();
            status = "PASS";
        } catch (const Skip& s) {
            status = "SKIP";
            detail = s.reason;
        } catch (const Failed& f) {
            status = "FAIL";
            detail = f.what;
        } catch (const std::exception& e) {
            status = "FAIL";
            detail = std::string("exception: ") + e.what();
        }
        failures += status == "FAIL";
        std::cout << status << ' ' << name << " - " << detail << std::endl;
    }
    return failures ? 1 : 0;
}
