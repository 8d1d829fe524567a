#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/metrics.hpp"
#include "pgkd/rng.hpp"
#include "pgkd/teacher.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

// Deterministic stand-in for the LLM teacher. It reads the classification
// report embedded in the prompt and allocates the requested batch across
// classes proportionally to (1 - F1), renormalized — uniformly when the
// report block is absent — then draws real texts from a held-out per-class
// reserve without replacement. `quality` is a label-noise rate: each emitted
// label is flipped to a random wrong class with that probability.
class MockOracleBackend : public TeacherBackend {
public:
    MockOracleBackend(Taxonomy taxonomy, const std::vector<LabeledSample>& reserve, double quality,
                      std::uint64_t seed)
        : taxonomy_(std::move(taxonomy)), quality_(quality), rng_(mix_seed(seed, 0x0bac)) {
        buckets_.resize(static_cast<std::size_t>(taxonomy_.size()));
        cursors_.assign(static_cast<std::size_t>(taxonomy_.size()), 0);
        for (const auto& s : reserve) {
            buckets_[static_cast<std::size_t>(s.label)].push_back(s.text);
        }
        for (int c = 0; c < taxonomy_.size(); ++c) {
            if (buckets_[static_cast<std::size_t>(c)].empty()) {
                throw PoolExhausted(taxonomy_.name_of(c));
            }
        }
        Rng shuffle_rng(mix_seed(seed, 0x5e1f));
        for (auto& bucket : buckets_) shuffle_rng.shuffle(bucket);
    }

    CompletionResult complete(const std::string& prompt) override {
        const int batch_size = parse_batch_size(prompt);
        const std::vector<double> weights = allocation_weights(prompt);
        const std::vector<int> allocation = largest_remainder(weights, batch_size);

        for (int c = 0; c < taxonomy_.size(); ++c) {
            const auto i = static_cast<std::size_t>(c);
            if (cursors_[i] + static_cast<std::size_t>(allocation[i]) > buckets_[i].size()) {
                return CompletionResult::failure("PoolExhausted: class '" + taxonomy_.name_of(c) +
                                                 "'");
            }
        }

        nlohmann::ordered_json records = nlohmann::json::array();
        for (int c = 0; c < taxonomy_.size(); ++c) {
            const auto i = static_cast<std::size_t>(c);
            for (int n = 0; n < allocation[i]; ++n) {
                int label = c;
                if (quality_ > 0.0 && rng_.unit() < quality_ && taxonomy_.size() > 1) {
                    const auto offset =
                        1 + static_cast<int>(rng_.below(static_cast<std::uint64_t>(
                                taxonomy_.size() - 1)));
                    label = (c + offset) % taxonomy_.size();
                }
                nlohmann::ordered_json record;
                record["text"] = buckets_[i][cursors_[i]++];
                record["label"] = taxonomy_.name_of(label);
                records.push_back(std::move(record));
            }
        }

        std::string response = records.dump();
        TokenUsage usage{approx_token_count(prompt), approx_token_count(response)};
        return CompletionResult::success(std::move(response), usage);
    }

private:
    int parse_batch_size(const std::string& prompt) const {
        const std::string marker = "please generate ";
        const std::size_t pos = prompt.find(marker);
        if (pos == std::string::npos) return 32;
        std::size_t i = pos + marker.size();
        int value = 0;
        bool any = false;
        while (i < prompt.size() && prompt[i] >= '0' && prompt[i] <= '9') {
            value = value * 10 + (prompt[i] - '0');
            ++i;
            any = true;
        }
        return any ? value : 32;
    }

    // (1 - F1) per class when the prompt carries a report block, else uniform.
    std::vector<double> allocation_weights(const std::string& prompt) const {
        std::vector<double> weights(static_cast<std::size_t>(taxonomy_.size()), 1.0);
        const std::string begin_marker =
            "classification report over validation set is:";
        const std::string end_marker =
            "Please consider a few samples that the model was able to classify correctly:";
        const std::size_t begin = prompt.find(begin_marker);
        if (begin == std::string::npos) return weights;
        const std::size_t block_start = prompt.find('\n', begin);
        const std::size_t end = prompt.find(end_marker, begin);
        if (block_start == std::string::npos || end == std::string::npos) return weights;
        const std::string block = prompt.substr(block_start + 1, end - block_start - 1);
        const auto parsed = parse_report(block, taxonomy_.size());
        if (!parsed) return weights;
        double total = 0.0;
        for (int c = 0; c < taxonomy_.size(); ++c) {
            weights[static_cast<std::size_t>(c)] =
                1.0 - parsed->per_class[static_cast<std::size_t>(c)].f1;
            total += weights[static_cast<std::size_t>(c)];
        }
        if (total <= 0.0) {
            weights.assign(static_cast<std::size_t>(taxonomy_.size()), 1.0);
        }
        return weights;
    }

    // Integer allocation of n across weights; remainders go to the largest
    // fractional parts, ties to the lower class id.
    static std::vector<int> largest_remainder(const std::vector<double>& weights, int n) {
        double total = 0.0;
        for (double w : weights) total += w;
        std::vector<int> counts(weights.size(), 0);
        if (total <= 0.0 || n <= 0) return counts;
        std::vector<std::pair<double, std::size_t>> remainders;
        int assigned = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            const double exact = static_cast<double>(n) * weights[i] / total;
            counts[i] = static_cast<int>(exact);
            assigned += counts[i];
            remainders.push_back({exact - static_cast<double>(counts[i]), i});
        }
        std::sort(remainders.begin(), remainders.end(),
                  [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                  });
        for (int r = 0; r < n - assigned; ++r) {
            ++counts[remainders[static_cast<std::size_t>(r)].second];
        }
        return counts;
    }

    Taxonomy taxonomy_;
    double quality_;
    Rng rng_;
    std::vector<std::vector<std::string>> buckets_;
    std::vector<std::size_t> cursors_;
};

// Always answers with the same category, in the zero-shot response format.
// Useful as a deterministic zero-shot baseline backend.
class ConstantBackend : public TeacherBackend {
public:
    ConstantBackend(Taxonomy taxonomy, int class_id)
        : taxonomy_(std::move(taxonomy)), class_id_(class_id) {}

    CompletionResult complete(const std::string& prompt) override {
        nlohmann::ordered_json j;
        j["class_label"] = class_id_;
        j["class_names"] = taxonomy_.name_of(class_id_);
        std::string response = j.dump();
        TokenUsage usage{approx_token_count(prompt), approx_token_count(response)};
        return CompletionResult::success(std::move(response), usage);
    }

    bool concurrent_safe() const override { return true; }

private:
    Taxonomy taxonomy_;
    int class_id_;
};

}  // namespace pgkd
