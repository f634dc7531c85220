#pragma once

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "xdnr/error.hpp"

namespace xdnr::detail {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native stores; big-endian hosts need byte swapping");

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::in | std::ios::binary : std::ios::in);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::out | std::ios::binary | std::ios::trunc
                                   : std::ios::out | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

/// Calls `fn(object, line_number)` for each nonblank line; line numbers are 1-based.
inline void for_each_jsonl(std::istream& in, const std::string& source,
                           const std::function<void(const json&, std::size_t)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(source + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        if (!obj.is_object())
            throw DataError(source + ":" + std::to_string(line_no) + ": expected a JSON object");
        fn(obj, line_no);
    }
}

inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
    auto in = open_input(path);
    for_each_jsonl(in, path.string(), fn);
}

inline std::string where(const std::string& source, std::size_t line_no) {
    return source + ":" + std::to_string(line_no);
}

/// Required string field; throws DataError naming the location.
inline std::string get_string(const json& obj, const char* key, const std::string& loc) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw DataError(loc + ": missing or non-string field \"" + key + "\"");
    return it->get<std::string>();
}

inline std::optional<std::string> get_optional_string(const json& obj, const char* key,
                                                      const std::string& loc) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw DataError(loc + ": field \"" + key + "\" must be a string");
    return it->get<std::string>();
}

/// Parses the date part of "YYYY-MM-DD" or an ISO-8601 timestamp beginning with it.
inline std::optional<std::chrono::sys_days> parse_date(std::string_view text) {
    if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
        int v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (text[i] < '0' || text[i] > '9') return std::nullopt;
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    auto y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
    if (!y || !m || !d) return std::nullopt;
    if (text.size() > 10 && text[10] != 'T' && text[10] != ' ') return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
                                          std::chrono::day{static_cast<unsigned>(*d)}};
    if (!ymd.ok()) return std::nullopt;
    return std::chrono::sys_days{ymd};
}

inline std::string format_date(std::chrono::sys_days day) {
    const std::chrono::year_month_day ymd{day};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

// Little-endian primitives for the binary formats.

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw DataError("truncated " + what);
    return value;
}

inline std::string read_bytes(std::istream& in, std::size_t n, const std::string& what) {
    std::string buf(n, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw DataError("truncated " + what);
    return buf;
}

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& what) {
    const auto got = read_bytes(in, magic.size(), what + " header");
    if (got != magic) throw DataError(what + ": bad magic, expected " + std::string(magic));
}

}  // namespace xdnr::detail
