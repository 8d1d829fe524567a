#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pgkd/errors.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

// Hashed bag-of-n-grams. Stands in for a transformer tokenizer/encoder behind
// the same narrow interface; the 512-token cap mirrors the usual maximum
// sequence length of the models this replaces.
struct FeaturizerConfig {
    std::vector<int> ngram_orders{1, 2};
    std::uint32_t dimension = 1u << 15;
    std::uint64_t hash_seed = 0x7a9c51ed;
    int max_tokens = 512;

    void validate() const {
        if (dimension < 2 || (dimension & (dimension - 1)) != 0) {
            throw Error("featurizer dimension must be a power of two >= 2");
        }
        if (ngram_orders.empty()) {
            throw Error("featurizer needs at least one n-gram order");
        }
        for (int k : ngram_orders) {
            if (k < 1) throw Error("n-gram orders must be positive");
        }
        if (max_tokens < 1) throw Error("max_tokens must be positive");
    }
};

// Sparse count vector, entries sorted by feature index.
struct SparseVector {
    std::vector<std::pair<std::uint32_t, double>> entries;
};

// Lowercase, whitespace-tokenize, truncate to the first max_tokens tokens,
// then hash every n-gram into [0, dimension). Duplicate indices accumulate.
inline SparseVector featurize(const std::string& text, const FeaturizerConfig& config) {
    const std::string lowered = to_lower(text);
    std::vector<std::string_view> tokens = whitespace_tokens(lowered);
    if (tokens.size() > static_cast<std::size_t>(config.max_tokens)) {
        tokens.resize(static_cast<std::size_t>(config.max_tokens));
    }

    std::unordered_map<std::uint32_t, double> counts;
    std::string gram;
    for (int order : config.ngram_orders) {
        const auto k = static_cast<std::size_t>(order);
        if (tokens.size() < k) continue;
        for (std::size_t i = 0; i + k <= tokens.size(); ++i) {
            gram.clear();
            for (std::size_t j = 0; j < k; ++j) {
                if (j) gram.push_back(' ');
                gram.append(tokens[i + j]);
            }
            const auto index =
                static_cast<std::uint32_t>(fnv1a64(gram, config.hash_seed) & (config.dimension - 1));
            counts[index] += 1.0;
        }
    }

    SparseVector out;
    out.entries.assign(counts.begin(), counts.end());
    std::sort(out.entries.begin(), out.entries.end());
    return out;
}

}  // namespace pgkd
