#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "xdnr/detail/io.hpp"
#include "xdnr/lexical_index.hpp"
#include "xdnr/pipeline.hpp"
#include "xdnr/trainer.hpp"

namespace xdnr {

/// Effective configuration of one CLI invocation, echoed as config.json.
struct RunConfig {
    std::string command;
    std::map<std::string, std::string> paths;
    std::string pipeline;
    RerankConfig rerank{};
    Bm25Params bm25{};
    TrainConfig train{};
    std::uint64_t seed = 42;
    unsigned threads = 1;
    std::string output_dir;
    // Command-specific scalar options (dims, thresholds, ...).
    std::map<std::string, detail::json> options;
};

/// XDNR_SEED, when set to an unsigned integer, overrides the configured seed.
inline std::uint64_t effective_seed(std::uint64_t configured) {
    const char* env = std::getenv("XDNR_SEED");
    if (!env || !*env) return configured;
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw UsageError(std::string("XDNR_SEED is not an unsigned integer: ") + env);
    return v;
}

inline detail::json to_json(const RunConfig& c) {
    detail::json paths = detail::json::object();
    for (const auto& [k, v] : c.paths) paths[k] = std::filesystem::absolute(v).string();
    detail::json options = detail::json::object();
    for (const auto& [k, v] : c.options) options[k] = v;
    return {{"command", c.command},
            {"paths", std::move(paths)},
            {"pipeline", c.pipeline},
            {"rerank", {{"top_k_stage1", c.rerank.top_k_stage1}, {"depth", c.rerank.depth}, {"scorer", to_string(c.rerank.scorer)}}},
            {"bm25", {{"k1", c.bm25.k1}, {"b", c.bm25.b}}},
            {"train", to_json(c.train)},
            {"seed", c.seed},
            {"threads", c.threads},
            {"output_dir", c.output_dir},
            {"options", std::move(options)}};
}

inline void echo_config(const RunConfig& c) {
    if (c.output_dir.empty()) return;
    std::filesystem::create_directories(c.output_dir);
    auto out = detail::open_output(std::filesystem::path(c.output_dir) / "config.json");
    out << to_json(c).dump(2) << '\n';
}

}  // namespace xdnr
