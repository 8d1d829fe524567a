#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pgkd {

inline std::string_view trim_view(std::string_view s) {
    auto is_space = [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
    };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Whitespace tokenization; runs of whitespace collapse.
inline std::vector<std::string_view> whitespace_tokens(std::string_view s) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    const std::size_t n = s.size();
    auto is_space = [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
    };
    while (i < n) {
        while (i < n && is_space(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t start = i;
        while (i < n && !is_space(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) tokens.push_back(s.substr(start, i - start));
    }
    return tokens;
}

// Whitespace-token proxy used for cost accounting when a backend does not
// report usage.
inline long approx_token_count(std::string_view s) {
    return static_cast<long>(whitespace_tokens(s).size());
}

// Seeded FNV-1a over bytes.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0) {
    std::uint64_t h = 1469598103934665603ull ^ seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace pgkd
