#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "oracles/oracles.hpp"
#include "xdnr/analysis.hpp"

using namespace xdnr;
using namespace std::chrono;

TEST(WeightedJaccard, WorkedExamples) {
    const TermWeights x{{"a", 1}, {"b", 2}}, y{{"a", 2}, {"b", 1}};
    EXPECT_DOUBLE_EQ(weighted_jaccard(x, y), 0.5);
    EXPECT_DOUBLE_EQ(weighted_jaccard(x, x), 1.0);
    EXPECT_DOUBLE_EQ(weighted_jaccard(x, TermWeights{{"c", 3}}), 0.0);
    EXPECT_DOUBLE_EQ(weighted_jaccard(x, y), weighted_jaccard(y, x));
    EXPECT_THROW(weighted_jaccard({}, {}), UsageError);
    EXPECT_THROW(weighted_jaccard(TermWeights{{"a", -1}}, x), UsageError);
}

// On 0/1 weights the weighted form reduces to set Jaccard |A n B| / |A u B|.
TEST(WeightedJaccard, BinaryWeightsGiveSetJaccard) {
    std::mt19937 gen(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::set<std::string> a, b;
        for (int i = 0; i < 12; ++i) {
            if (gen() % 2) a.insert("t" + std::to_string(i));
            if (gen() % 2) b.insert("t" + std::to_string(i));
        }
        if (a.empty() && b.empty()) continue;
        TermWeights x, y;
        for (const auto& t : a) x[t] = 1.0;
        for (const auto& t : b) y[t] = 1.0;
        std::size_t inter = 0;
        for (const auto& t : a) inter += b.count(t);
        const double want = double(inter) / double(a.size() + b.size() - inter);
        EXPECT_NEAR(weighted_jaccard(x, y), want, 1e-12);
    }
}

TEST(DomainOverlap, IdentityDisjointAndToy) {
    const std::vector<std::string> a{"lion tiger", "tiger zebra", "zebra"};
    const std::vector<std::string> b{"lion lion", "hyena", "Tiger!"};
    EXPECT_DOUBLE_EQ(domain_overlap(a, a), 1.0);
    EXPECT_DOUBLE_EQ(domain_overlap(a, {"vaccine passport"}), 0.0);
    // a: lion 1/5, tiger 2/5, zebra 2/5;  b: lion 2/4, hyena 1/4, tiger 1/4
    const double num = 0.2 + 0.25, den = 0.5 + 0.4 + 0.4 + 0.25;
    EXPECT_NEAR(domain_overlap(a, b), num / den, 1e-12);
    EXPECT_THROW(domain_overlap({}, a), UsageError);
    EXPECT_THROW(domain_overlap({"!!"}, {"..."}), DataError);
}

TEST(FleissKappa, UnanimousIsOne) {
    EXPECT_DOUBLE_EQ(fleiss_kappa({{3, 0, 0}, {0, 3, 0}, {0, 0, 3}, {3, 0, 0}}, 3), 1.0);
    // Every item unanimous on the same category: expected agreement is also 1.
    EXPECT_DOUBLE_EQ(fleiss_kappa({{2, 0}, {2, 0}}, 2), 1.0);
}

TEST(FleissKappa, ChanceLevelTablesFoundByExhaustiveSearch) {
    // Two raters, two categories: each row is [2,0], [1,1] or [0,2]. A table sits at
    // chance exactly when P = Pe, i.e. 4 N u == c0^2 + c1^2 in integers, where u is
    // the number of unanimous rows and c0, c1 are the category column totals.
    const std::vector<std::vector<long>> rows{{2, 0}, {1, 1}, {0, 2}};
    std::size_t found = 0;
    for (std::size_t n = 2; n <= 6; ++n) {
        std::vector<std::size_t> pick(n, 0);
        for (;;) {
            std::vector<std::vector<long>> table;
            long u = 0, c0 = 0, c1 = 0;
            for (auto p : pick) {
                table.push_back(rows[p]);
                u += p != 1;
                c0 += rows[p][0];
                c1 += rows[p][1];
            }
            if (4 * long(n) * u == c0 * c0 + c1 * c1 && c0 * c1 != 0) {
                ++found;
                EXPECT_NEAR(fleiss_kappa(table, 2), 0.0, 1e-9);
            }
            std::size_t i = 0;
            while (i < n && ++pick[i] == rows.size()) pick[i++] = 0;
            if (i == n) break;
        }
    }
    EXPECT_GT(found, 0u);
    EXPECT_NEAR(fleiss_kappa({{2, 0}, {0, 2}, {1, 1}, {1, 1}}, 2), 0.0, 1e-9);
}

TEST(FleissKappa, RowPermutationInvarianceAndErrors) {
    std::mt19937 gen(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<long>> table(3 + gen() % 10, std::vector<long>(3, 0));
        for (auto& row : table)
            for (int r = 0; r < 4; ++r) ++row[gen() % 3];
        auto shuffled = table;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        bool degenerate = false;
        double k = 0.0;
        try {
            k = fleiss_kappa(table, 4);
        } catch (const DataError&) {
            degenerate = true;
        }
        if (degenerate) continue;
        EXPECT_NEAR(fleiss_kappa(shuffled, 4), k, 1e-12);
        EXPECT_LE(k, 1.0);
    }
    EXPECT_THROW(fleiss_kappa({{1, 1}}, 1), UsageError);
    EXPECT_THROW(fleiss_kappa({}, 2), UsageError);
    EXPECT_THROW(fleiss_kappa({{1, 0}}, 2), DataError);
    EXPECT_THROW(fleiss_kappa({{3, -1}}, 2), DataError);
}

TEST(FleissKappa, CategoryRelabellingInvariance) {
    std::mt19937 gen(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<long>> table(2 + gen() % 10, std::vector<long>(4, 0));
        for (auto& row : table)
            for (int r = 0; r < 5; ++r) ++row[gen() % 4];
        std::vector<std::size_t> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), gen);
        auto relabelled = table;
        for (std::size_t i = 0; i < table.size(); ++i)
            for (std::size_t c = 0; c < 4; ++c) relabelled[i][perm[c]] = table[i][c];
        try {
            const double k = fleiss_kappa(table, 5);
            EXPECT_NEAR(fleiss_kappa(relabelled, 5), k, 1e-12);
        } catch (const DataError&) {
            EXPECT_THROW(fleiss_kappa(relabelled, 5), DataError);
        }
    }
}

TEST(FleissKappa, CsvFixture) {
    std::ifstream in(std::string(XDNR_TEST_DATA) + "/kappa.csv");
    const auto t = read_kappa_csv(in, "kappa.csv");
    EXPECT_EQ(t.categories, (std::vector<std::string>{"exact", "partial", "irrelevant"}));
    EXPECT_EQ(t.item_ids.size(), 4u);
    EXPECT_DOUBLE_EQ(fleiss_kappa(t.counts, 3), 1.0);

    std::istringstream ragged("item_id,a,b\nx,1\n");
    try {
        read_kappa_csv(ragged, "mem.csv");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("mem.csv:2"), std::string::npos) << e.what();
    }
    std::istringstream bad("item_id,a,b\nx,1,z\n");
    EXPECT_THROW(read_kappa_csv(bad, "mem.csv"), DataError);
    std::istringstream headerless("x,1,2\n");
    EXPECT_THROW(read_kappa_csv(headerless, "mem.csv"), DataError);
}

namespace {

sys_days date_of(int y, unsigned m, unsigned d) { return sys_days{year{y} / month{m} / std::chrono::day{d}}; }

struct GapFixture {
    QuerySet queries;
    DebunkCorpus debunks;
    JudgmentSet judgments;
};

// One query/debunk pair per gap, all judged exact.
GapFixture gap_fixture(const std::vector<long>& gaps) {
    std::vector<QueryClaim> qs;
    std::vector<Debunk> ds;
    std::vector<RelevanceJudgment> js;
    const auto base = date_of(2021, 1, 1);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        const auto id = std::to_string(i);
        qs.push_back({"q" + id, "en", "t", {}, base, true});
        ds.push_back({"d" + id, "en", "c", "t", base - days{gaps[i]}, {}});
        js.push_back({"q" + id, "d" + id, i % 2 ? RelevanceLevel::Partial : RelevanceLevel::Exact});
    }
    return {QuerySet(qs), DebunkCorpus(ds), JudgmentSet(js)};
}

}  // namespace

TEST(TimeGaps, WorkedExamples) {
    auto same = gap_fixture({0});
    auto s = time_gap_stats(same.judgments, same.queries, same.debunks);
    EXPECT_EQ(s.median_days, 0.0);
    EXPECT_EQ(s.fraction_debunk_first, 1.0);

    auto f = gap_fixture({200, 10, -5, 76});
    s = time_gap_stats(f.judgments, f.queries, f.debunks);
    EXPECT_EQ(s.median_days, 76.0);
    EXPECT_EQ(s.dated_pairs, 4u);
    EXPECT_EQ(s.debunk_first_pairs, 3u);
    EXPECT_DOUBLE_EQ(s.fraction_debunk_first, 0.75);
    ASSERT_EQ(s.histogram.size(), 3u);
    EXPECT_EQ(s.histogram[0].start_days, 0);
    EXPECT_EQ(s.histogram[1].start_days, 60);
    EXPECT_EQ(s.histogram[2].start_days, 180);
    EXPECT_EQ(to_json(s).at("histogram").size(), 3u);

    auto even = gap_fixture({10, 20});
    EXPECT_EQ(time_gap_stats(even.judgments, even.queries, even.debunks).median_days, 15.0);
}

TEST(TimeGaps, IrrelevantAndUndatedPairsAreSkipped) {
    std::vector<QueryClaim> qs{{"q", "en", "t", {}, date_of(2020, 5, 1), true}, {"u", "en", "t", {}, {}, true}};
    std::vector<Debunk> ds{{"d", "en", "c", "", date_of(2020, 4, 1), {}}, {"e", "en", "c", "", date_of(2019, 1, 1), {}}};
    JudgmentSet js(std::vector<RelevanceJudgment>{{"q", "d", RelevanceLevel::Exact},
                                                  {"q", "e", RelevanceLevel::Irrelevant},
                                                  {"u", "d", RelevanceLevel::Exact}});
    const auto s = time_gap_stats(js, QuerySet(qs), DebunkCorpus(ds));
    EXPECT_EQ(s.dated_pairs, 1u);
    EXPECT_EQ(s.undated_pairs, 1u);
    EXPECT_EQ(s.median_days, 30.0);
    JudgmentSet only_undated(std::vector<RelevanceJudgment>{{"u", "d", RelevanceLevel::Exact}});
    EXPECT_THROW(time_gap_stats(only_undated, QuerySet(qs), DebunkCorpus(ds)), DataError);
    EXPECT_THROW(time_gap_stats(js, QuerySet(qs), DebunkCorpus(ds), 0), UsageError);
}

TEST(Latency, PercentilesAndSingleton) {
    const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    EXPECT_EQ(percentile(xs, 0.5), 5.0);
    EXPECT_EQ(percentile(xs, 0.9), 9.0);
    EXPECT_EQ(percentile({4.0}, 0.9), 4.0);

    std::vector<QueryClaim> one{{"q", "en", "lion", {}, {}, true}};
    auto run = [](const QueryClaim&) {
        RankedList r;
        r.entries.push_back({"d", 1.0});
        return r;
    };
    const auto rep = latency_bench("toy", run, one, 0, 1);
    ASSERT_EQ(rep.samples.size(), 1u);
    EXPECT_EQ(rep.p50, rep.p90);
    EXPECT_EQ(rep.p50, rep.mean);
    EXPECT_FALSE(rep.mrr.has_value());
    EXPECT_THROW(latency_bench("toy", run, one, 0, 0), UsageError);
}

TEST(Latency, RankingQualityIsStableAcrossRuns) {
    std::vector<QueryClaim> qs;
    Qrels qrels;
    for (int i = 0; i < 10; ++i) {
        qs.push_back({"q" + std::to_string(i), "en", "x", {}, {}, true});
        qrels.set("q" + std::to_string(i), "d" + std::to_string(i % 3), 2);
    }
    std::size_t calls = 0;
    auto run = [&](const QueryClaim& q) {
        ++calls;
        RankedList r;
        r.entries = {{"d0", 3}, {"d1", 2}, {"d2", 1}};
        r.query_id = q.id;
        return r;
    };
    const auto a = latency_bench("t", run, qs, 2, 3, &qrels);
    const auto b = latency_bench("t", run, qs, 0, 1, &qrels);
    EXPECT_EQ(calls, 10u * (2 + 3) + 10u);
    EXPECT_EQ(a.samples.size(), 30u);
    ASSERT_TRUE(a.mrr && b.mrr);
    EXPECT_EQ(*a.mrr, *b.mrr);
    EXPECT_NEAR(*a.mrr, (4 * 1.0 + 3 * 0.5 + 3 / 3.0) / 10, 1e-12);
    const auto j = to_json(a);
    EXPECT_EQ(j.at("sample_size"), 30);
    EXPECT_TRUE(j.contains("p50") && j.contains("p90") && j.contains("mean") && j.contains("model_tag"));
}

namespace {

std::pair<std::vector<std::string>, std::vector<std::vector<double>>> to_rows(const EmbeddingMatrix& m) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).begin(), m.row(i).end());
    return {m.ids(), rows};
}

void expect_matches_oracle(const EmbeddingMatrix& m, std::size_t depth, double threshold) {
    const auto got = candidate_pairs(m, depth, threshold);
    const auto [ids, rows] = to_rows(m);
    const auto want = oracle::candidate_pairs(ids, rows, depth, threshold);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(got[i].source, want[i].source);
        EXPECT_EQ(got[i].target, want[i].target);
        EXPECT_NEAR(got[i].similarity, want[i].sim, 1e-12);
    }
}

}  // namespace

TEST(CandidatePairs, TenHashedClaimsDepthThree) {
    std::vector<std::pair<std::string, std::string>> claims;
    for (int i = 0; i < 10; ++i)
        claims.emplace_back("c" + std::to_string(i), "the lion walks the street " + std::string(std::size_t(i + 1), 'z'));
    const auto m = hash_embed_all(claims, 64, 3);
    const auto got = candidate_pairs(m, 3, 0.0);
    EXPECT_EQ(got.size(), 30u);
    expect_matches_oracle(m, 3, 0.0);
}

TEST(CandidatePairs, ThresholdAndDuplicates) {
    const EmbeddingMatrix m(2, {"a", "b", "c", "z"}, {1, 0, 1, 0, 0, 1, 0, 0});
    const auto got = candidate_pairs(m);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0], (CandidatePair{"a", "b", 1.0}));
    EXPECT_EQ(got[1], (CandidatePair{"b", "a", 1.0}));
    const EmbeddingMatrix orth(2, {"a", "b"}, {1, 0, 0, 1});
    EXPECT_TRUE(candidate_pairs(orth).empty());
    EXPECT_THROW(candidate_pairs(EmbeddingMatrix(2, {"a"}, {1, 0})), UsageError);

    std::ostringstream out;
    write_candidate_pairs(out, got);
    const auto first = detail::json::parse(out.str().substr(0, out.str().find('\n')));
    EXPECT_EQ(first.at("source"), "a");
    EXPECT_EQ(first.at("sim"), 1.0);
}

TEST(CandidatePairs, RandomClaimsMatchOracleAndIgnoreRowOrder) {
    std::mt19937 gen(31);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + gen() % 50, dim = 4;
        std::vector<std::string> ids;
        std::vector<double> values;
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back("k" + std::to_string(gen()));
            // Clustered vectors so the threshold actually bites.
            const int centre = int(gen() % 3);
            for (std::size_t k = 0; k < dim; ++k) values.push_back((int(k) == centre ? 3.0 : 0.0) + nd(gen));
        }
        const EmbeddingMatrix m(dim, ids, values);
        expect_matches_oracle(m, 7, 0.6);

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), gen);
        std::vector<std::string> pids;
        std::vector<double> pvals;
        for (auto p : perm) {
            pids.push_back(ids[p]);
            pvals.insert(pvals.end(), values.begin() + long(p * dim), values.begin() + long((p + 1) * dim));
        }
        EXPECT_EQ(candidate_pairs(EmbeddingMatrix(dim, pids, pvals)), candidate_pairs(m));
    }
}
