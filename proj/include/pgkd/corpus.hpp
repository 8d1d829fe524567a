#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/errors.hpp"
#include "pgkd/rng.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

// Ordered set of class names; position is the class id. Supplied as its own
// file so ids stay stable even when a sampled subset misses classes.
class Taxonomy {
public:
    Taxonomy() = default;

    static Taxonomy from_names(const std::vector<std::string>& raw_names) {
        Taxonomy t;
        for (const auto& raw : raw_names) {
            std::string name = trim(raw);
            if (name.empty()) {
                throw Error("taxonomy contains an empty class name");
            }
            if (t.index_.count(name)) {
                throw Error("taxonomy contains duplicate class name '" + name + "'");
            }
            t.index_.emplace(name, static_cast<int>(t.classes_.size()));
            t.classes_.push_back(std::move(name));
        }
        if (t.classes_.empty()) {
            throw Error("taxonomy must contain at least one class");
        }
        return t;
    }

    // Plain text file, one class per line, order = class id.
    static Taxonomy load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw Error("cannot open taxonomy file: " + path.string());
        }
        std::vector<std::string> names;
        std::string line;
        while (std::getline(in, line)) {
            if (!trim_view(line).empty()) names.push_back(line);
        }
        return from_names(names);
    }

    const std::vector<std::string>& classes() const { return classes_; }
    int size() const { return static_cast<int>(classes_.size()); }
    const std::string& name_of(int id) const { return classes_.at(static_cast<std::size_t>(id)); }

    std::optional<int> id_of(std::string_view name) const {
        auto it = index_.find(trim(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::vector<std::string> classes_;
    std::unordered_map<std::string, int> index_;
};

enum class OriginKind { Seed, Generated };

struct Origin {
    OriginKind kind = OriginKind::Seed;
    int kd_step = 0;  // >= 1 when kind == Generated

    static Origin seed() { return {OriginKind::Seed, 0}; }
    static Origin generated(int step) { return {OriginKind::Generated, step}; }
    bool operator==(const Origin&) const = default;
};

struct LabeledSample {
    long id = 0;
    std::string text;
    int label = 0;
    Origin origin;
};

// D^0 train portion (which grows into the history) plus D^val.
struct DatasetSplit {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> val;
};

// Line-delimited records, one JSON object per line with fields `text` and
// `label` (class name). Blank lines are skipped; ids are assigned in file
// order over the surviving records.
inline std::vector<LabeledSample> load_dataset(const std::filesystem::path& path,
                                               const Taxonomy& taxonomy) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open dataset file: " + path.string());
    }
    std::vector<LabeledSample> samples;
    std::string line;
    std::size_t record_index = 0;
    while (std::getline(in, line)) {
        if (trim_view(line).empty()) continue;
        nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) {
            throw MalformedRecord(record_index, "not a JSON object");
        }
        if (!record.contains("text") || !record["text"].is_string()) {
            throw MalformedRecord(record_index, "missing string field 'text'");
        }
        if (!record.contains("label") || !record["label"].is_string()) {
            throw MalformedRecord(record_index, "missing string field 'label'");
        }
        std::string text = trim(record["text"].get<std::string>());
        if (text.empty()) {
            throw EmptyText(record_index);
        }
        const std::string label_name = record["label"].get<std::string>();
        auto label = taxonomy.id_of(label_name);
        if (!label) {
            throw UnknownLabel(record_index, trim(label_name));
        }
        samples.push_back({static_cast<long>(samples.size()), std::move(text), *label,
                           Origin::seed()});
        ++record_index;
    }
    return samples;
}

// Uniform subset of size n without replacement, deterministic for a fixed
// seed. Sample ids are preserved.
inline std::vector<LabeledSample> sample_seed_set(const std::vector<LabeledSample>& pool,
                                                  std::size_t n, std::uint64_t seed) {
    if (n > pool.size()) {
        throw InsufficientPool(n, pool.size());
    }
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<LabeledSample> picked;
    picked.reserve(n);
    for (std::size_t i = 0; i < n; ++i) picked.push_back(pool[order[i]]);
    return picked;
}

// Deterministic shuffle, then the first floor(train_fraction * N) samples go
// to train and the remainder to validation.
inline DatasetSplit split(const std::vector<LabeledSample>& samples, double train_fraction,
                          std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw Error("train_fraction must lie strictly between 0 and 1");
    }
    if (samples.size() < 2) {
        throw DegenerateSplit();
    }
    std::vector<LabeledSample> shuffled = samples;
    Rng rng(seed);
    rng.shuffle(shuffled);

    const auto n_train = static_cast<std::size_t>(
        static_cast<double>(shuffled.size()) * train_fraction);
    if (n_train == 0 || n_train == shuffled.size()) {
        throw DegenerateSplit();
    }

    DatasetSplit out;
    out.train.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_train));
    out.val.assign(shuffled.begin() + static_cast<long>(n_train), shuffled.end());

    std::unordered_set<std::string_view> train_texts;
    train_texts.reserve(out.train.size());
    for (const auto& s : out.train) train_texts.insert(s.text);
    for (const auto& s : out.val) {
        if (train_texts.count(s.text)) {
            throw SplitTextOverlap(s.text);
        }
    }
    return out;
}

}  // namespace pgkd
