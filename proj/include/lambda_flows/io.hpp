#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace lambda_flows {

/// Shortest decimal form of a double that parses back to the same bits.
/// Used for every number written to CSV so outputs round-trip exactly.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string format_u64(std::uint64_t x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

/// FNV-1a over bytes; stable fingerprint for config provenance lines.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

namespace detail {

/// strtod starting at pos, advancing pos past the digits. `context` names the
/// calling parser in error messages, `what` the field being read.
inline double parse_number(const std::string& line, std::size_t& pos, const char* context,
                           const char* what) {
    const char* start = line.c_str() + pos;
    char* end = nullptr;
    const double v = std::strtod(start, &end);
    if (end == start)
        throw std::invalid_argument(std::string(context) + ": malformed " + what +
                                    " in line: " + line);
    pos += static_cast<std::size_t>(end - start);
    return v;
}

inline void expect_token(const std::string& line, std::size_t& pos, const char* context,
                         const char* token) {
    const std::size_t len = std::char_traits<char>::length(token);
    if (line.compare(pos, len, token) != 0)
        throw std::invalid_argument(std::string(context) + ": expected '" + token +
                                    "' in line: " + line);
    pos += len;
}

} // namespace detail

} // namespace lambda_flows
