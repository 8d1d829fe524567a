#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace pgkd {

namespace detail {

// Returns one past the close of the bracket opening at `start`, walking
// string-aware so brackets inside JSON strings are ignored. npos when the
// payload is truncated.
inline std::size_t balanced_end(std::string_view s, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[' || c == '{') {
            ++depth;
        } else if (c == ']' || c == '}') {
            --depth;
            if (depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

// Salvages complete objects from a damaged array region (truncated tail,
// trailing commas). Returns nullopt when no object parses.
inline std::optional<nlohmann::json> recover_objects(std::string_view region) {
    nlohmann::json out = nlohmann::json::array();
    std::size_t i = 0;
    while (i < region.size()) {
        const std::size_t open = region.find('{', i);
        if (open == std::string_view::npos) break;
        const std::size_t end = balanced_end(region, open);
        if (end == std::string_view::npos) break;
        nlohmann::json obj =
            nlohmann::json::parse(region.substr(open, end - open), nullptr, false);
        if (obj.is_discarded()) break;
        out.push_back(std::move(obj));
        i = end;
    }
    if (out.empty()) return std::nullopt;
    return out;
}

}  // namespace detail

// Pulls the first list-of-objects payload out of free-form model output,
// tolerating surrounding prose, code fences, truncated tails, and trailing
// commas. A bare object counts as a one-element list. Arrays holding no
// objects at all are skipped so prose like "[sic]" does not shadow a real
// payload further on.
inline std::optional<nlohmann::json> extract_record_array(const std::string& raw) {
    const std::string_view s = raw;
    for (std::size_t pos = s.find('['); pos != std::string_view::npos;
         pos = s.find('[', pos + 1)) {
        const std::size_t end = detail::balanced_end(s, pos);
        if (end != std::string_view::npos) {
            nlohmann::json parsed = nlohmann::json::parse(s.substr(pos, end - pos), nullptr, false);
            if (!parsed.is_discarded() && parsed.is_array()) {
                bool has_object = parsed.empty();
                for (const auto& el : parsed) {
                    if (el.is_object()) {
                        has_object = true;
                        break;
                    }
                }
                if (has_object) return parsed;
            }
            // Balanced but unparsable (e.g. trailing comma): try salvage.
            if (auto recovered = detail::recover_objects(s.substr(pos, end - pos))) {
                return recovered;
            }
        } else if (auto recovered = detail::recover_objects(s.substr(pos))) {
            return recovered;
        }
    }
    // No usable array anywhere; accept a single bare object.
    for (std::size_t pos = s.find('{'); pos != std::string_view::npos;
         pos = s.find('{', pos + 1)) {
        const std::size_t end = detail::balanced_end(s, pos);
        if (end == std::string_view::npos) break;
        nlohmann::json parsed = nlohmann::json::parse(s.substr(pos, end - pos), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) {
            nlohmann::json arr = nlohmann::json::array();
            arr.push_back(std::move(parsed));
            return arr;
        }
    }
    return std::nullopt;
}

}  // namespace pgkd
