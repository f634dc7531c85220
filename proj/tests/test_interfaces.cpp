// Contracts shared with the embedding exporter and external scorers.

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "xdnr/dense_index.hpp"
#include "xdnr/pipeline.hpp"

using namespace xdnr;
using json = detail::json;

namespace {

const std::string kData = XDNR_TEST_DATA;

json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in);
}

}  // namespace

// exported.bin was written by an independent little-endian writer; the manifest holds
// that writer's own double-precision cosines.
TEST(ExportedEmbeddings, LoadMatchesManifestWithinF32Tolerance) {
    const auto manifest = read_json(kData + "/exported.manifest.json");
    const auto m = EmbeddingMatrix::load(kData + "/exported.bin");
    EXPECT_EQ(m.dim(), manifest.at("dim").get<std::size_t>());
    EXPECT_EQ(m.rows(), manifest.at("count").get<std::size_t>());
    EXPECT_EQ(manifest.at("pooling"), "mean");
    EXPECT_EQ(manifest.at("max_seq_len"), 256);
    EXPECT_TRUE(m.find("débunk-3").has_value());
    for (const auto& c : manifest.at("cosines")) {
        const auto a = m.row(c[0].get<std::string>()), b = m.row(c[1].get<std::string>());
        EXPECT_NEAR(cosine(a, b), c[2].get<double>(), 1e-5) << c.dump();
    }
}

TEST(ExportedEmbeddings, RewriteIsByteIdentical) {
    std::ifstream in(kData + "/exported.bin", std::ios::binary);
    const std::string original((std::istreambuf_iterator<char>(in)), {});
    std::istringstream src(original);
    std::ostringstream out;
    EmbeddingMatrix::read_binary(src).write(out);
    EXPECT_EQ(out.str(), original);
}

TEST(ScorerProtocol, ConformanceFixture) {
    std::ifstream in(kData + "/scorer_conformance.jsonl");
    std::string line;
    std::size_t cases = 0;
    while (std::getline(in, line)) {
        const auto c = json::parse(line);
        const std::string kind = c.at("kind"), name = c.at("case");
        const auto& msg = c.at("response");
        const bool valid = c.at("valid");
        ++cases;
        if (kind == "handshake") {
            if (valid) EXPECT_NO_THROW(check_handshake(msg)) << name;
            else EXPECT_THROW(check_handshake(msg), ScorerError) << name;
        } else if (kind == "pair") {
            if (valid) EXPECT_DOUBLE_EQ(parse_pair_response(msg, c.at("id")), c.at("score").get<double>()) << name;
            else EXPECT_THROW(parse_pair_response(msg, c.at("id")), ScorerError) << name;
        } else {
            ASSERT_EQ(kind, "list") << name;
            if (!valid) {
                EXPECT_THROW(parse_listwise_response(msg), ScorerError) << name;
                continue;
            }
            const auto order = parse_listwise_response(msg);
            EXPECT_EQ(order, c.at("order").get<std::vector<std::string>>()) << name;
            const auto repaired = repair_permutation(c.at("candidates").get<std::vector<std::string>>(), order);
            EXPECT_EQ(repaired.ids, c.at("repaired_order").get<std::vector<std::string>>()) << name;
            EXPECT_EQ(repaired.repaired, c.at("repaired").get<bool>()) << name;
        }
    }
    EXPECT_EQ(cases, 20u);
}

TEST(ScorerProtocol, RequestShapes) {
    EXPECT_EQ(handshake_message(), json::parse(R"({"proto":"xdnr-scorer","version":1})"));
    EXPECT_EQ(pair_request("7", "q", ""), json::parse(R"({"type":"pair","id":"7","query":"q","doc":""})"));
    const std::vector<ListCandidate> cands{{"a", "x"}, {"b", "y"}};
    EXPECT_EQ(listwise_request("q", cands),
              json::parse(R"({"type":"list","query":"q","candidates":[{"id":"a","text":"x"},{"id":"b","text":"y"}]})"));
}
