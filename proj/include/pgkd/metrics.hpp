#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pgkd/corpus.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/student.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

struct PredictionRecord {
    long sample_id = 0;
    int true_label = 0;
    int predicted_label = 0;
    double confidence = 0.0;  // probability of the predicted class
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;
};

// Per-class metrics cover every taxonomy class, so absent classes contribute
// F1 = 0 with support 0 and the macro average has stable width.
struct ClassificationReport {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    long total = 0;
};

// Precision/recall/F1 with the 0/0 = 0 convention.
inline ClassificationReport build_report(const std::vector<PredictionRecord>& records,
                                         int num_classes) {
    std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
    std::vector<long> fp(static_cast<std::size_t>(num_classes), 0);
    std::vector<long> fn(static_cast<std::size_t>(num_classes), 0);
    long correct = 0;
    for (const auto& r : records) {
        if (r.predicted_label == r.true_label) {
            ++tp[static_cast<std::size_t>(r.true_label)];
            ++correct;
        } else {
            ++fp[static_cast<std::size_t>(r.predicted_label)];
            ++fn[static_cast<std::size_t>(r.true_label)];
        }
    }

    ClassificationReport report;
    report.total = static_cast<long>(records.size());
    report.per_class.resize(static_cast<std::size_t>(num_classes));
    double f1_sum = 0.0;
    double weighted_sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        const auto i = static_cast<std::size_t>(k);
        ClassMetrics& m = report.per_class[i];
        m.support = tp[i] + fn[i];
        const long pred_count = tp[i] + fp[i];
        m.precision = pred_count > 0 ? static_cast<double>(tp[i]) / static_cast<double>(pred_count)
                                     : 0.0;
        m.recall = m.support > 0 ? static_cast<double>(tp[i]) / static_cast<double>(m.support) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        f1_sum += m.f1;
        weighted_sum += m.f1 * static_cast<double>(m.support);
    }
    report.accuracy =
        report.total > 0 ? static_cast<double>(correct) / static_cast<double>(report.total) : 0.0;
    report.macro_f1 = num_classes > 0 ? f1_sum / static_cast<double>(num_classes) : 0.0;
    report.weighted_f1 = report.total > 0 ? weighted_sum / static_cast<double>(report.total) : 0.0;
    return report;
}

struct Evaluation {
    double loss = 0.0;
    ClassificationReport report;
    std::vector<PredictionRecord> records;
};

inline Evaluation evaluate(const StudentModel& model, const std::vector<LabeledSample>& data) {
    if (data.empty()) throw EmptyDataset();
    Evaluation out;
    std::vector<SparseVector> features;
    std::vector<int> labels;
    features.reserve(data.size());
    labels.reserve(data.size());
    out.records.reserve(data.size());
    for (const auto& s : data) {
        features.push_back(featurize(s.text, model.featurizer()));
        labels.push_back(s.label);
        const std::vector<double> p = model.predict_proba(features.back());
        int predicted = 0;
        for (int k = 1; k < model.num_classes(); ++k) {
            if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(predicted)]) {
                predicted = k;
            }
        }
        out.records.push_back({s.id, s.label, predicted, p[static_cast<std::size_t>(predicted)]});
    }
    out.loss = mean_cross_entropy(model, features, labels);
    out.report = build_report(out.records, model.num_classes());
    return out;
}

namespace detail {
inline std::unordered_map<long, const LabeledSample*> index_by_id(
    const std::vector<LabeledSample>& samples) {
    std::unordered_map<long, const LabeledSample*> index;
    index.reserve(samples.size());
    for (const auto& s : samples) index.emplace(s.id, &s);
    return index;
}
}  // namespace detail

struct Partition {
    std::vector<LabeledSample> correct;
    std::vector<LabeledSample> incorrect;
};

// Splits samples into correctly and incorrectly classified, stable by id.
inline Partition partition(const std::vector<PredictionRecord>& records,
                           const std::vector<LabeledSample>& samples) {
    const auto index = detail::index_by_id(samples);
    std::vector<PredictionRecord> ordered = records;
    std::sort(ordered.begin(), ordered.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) {
                  return a.sample_id < b.sample_id;
              });
    Partition out;
    for (const auto& r : ordered) {
        auto it = index.find(r.sample_id);
        if (it == index.end()) throw DanglingId(r.sample_id);
        if (r.predicted_label == r.true_label) {
            out.correct.push_back(*it->second);
        } else {
            out.incorrect.push_back(*it->second);
        }
    }
    return out;
}

struct HardNegative {
    LabeledSample sample;
    int predicted_label = 0;
    double confidence = 0.0;
};

// Misclassified samples the model is most confident about: top-k by
// confidence descending, ties broken by lower sample id.
inline std::vector<HardNegative> mine_hard_negatives(const std::vector<PredictionRecord>& records,
                                                     const std::vector<LabeledSample>& samples,
                                                     std::size_t k) {
    const auto index = detail::index_by_id(samples);
    std::vector<PredictionRecord> wrong;
    for (const auto& r : records) {
        if (r.predicted_label != r.true_label) {
            if (!index.count(r.sample_id)) throw DanglingId(r.sample_id);
            wrong.push_back(r);
        }
    }
    std::sort(wrong.begin(), wrong.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.sample_id < b.sample_id;
    });
    if (wrong.size() > k) wrong.resize(k);
    std::vector<HardNegative> out;
    out.reserve(wrong.size());
    for (const auto& r : wrong) {
        out.push_back({*index.at(r.sample_id), r.predicted_label, r.confidence});
    }
    return out;
}

// Fixed-layout report text, byte-stable for equal inputs. One row per class
// followed by accuracy / macro_f1 / weighted_f1 rows; this is the exact block
// inserted into the teacher prompt.
inline std::string render_report(const ClassificationReport& report, const Taxonomy& taxonomy) {
    std::size_t name_width = std::string("weighted_f1").size();
    for (const auto& name : taxonomy.classes()) name_width = std::max(name_width, name.size());

    std::string out;
    char row[512];
    std::snprintf(row, sizeof(row), "%-*s  %9s  %9s  %9s  %9s\n", static_cast<int>(name_width),
                  "class", "precision", "recall", "f1", "support");
    out += row;
    for (int k = 0; k < taxonomy.size(); ++k) {
        const ClassMetrics& m = report.per_class[static_cast<std::size_t>(k)];
        std::snprintf(row, sizeof(row), "%-*s  %9.3f  %9.3f  %9.3f  %9ld\n",
                      static_cast<int>(name_width), taxonomy.name_of(k).c_str(), m.precision,
                      m.recall, m.f1, m.support);
        out += row;
    }
    std::snprintf(row, sizeof(row), "%-*s  %9.3f\n", static_cast<int>(name_width), "accuracy",
                  report.accuracy);
    out += row;
    std::snprintf(row, sizeof(row), "%-*s  %9.3f\n", static_cast<int>(name_width), "macro_f1",
                  report.macro_f1);
    out += row;
    std::snprintf(row, sizeof(row), "%-*s  %9.3f\n", static_cast<int>(name_width), "weighted_f1",
                  report.weighted_f1);
    out += row;
    return out;
}

// Parsed counterpart of render_report. Class rows are matched positionally
// against the taxonomy order, so class names never need re-tokenizing.
struct ParsedReport {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
};

inline std::optional<ParsedReport> parse_report(const std::string& text, int num_classes) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = trim(std::string_view(text).substr(pos, nl - pos));
        if (!line.empty()) lines.push_back(line);
        pos = nl + 1;
    }
    if (lines.size() != static_cast<std::size_t>(num_classes) + 4) return std::nullopt;

    auto last_tokens = [](const std::string& line, std::size_t n) {
        std::vector<std::string> tokens;
        for (auto tv : whitespace_tokens(line)) tokens.emplace_back(tv);
        if (tokens.size() < n) return std::vector<std::string>{};
        return std::vector<std::string>(tokens.end() - static_cast<long>(n), tokens.end());
    };

    ParsedReport parsed;
    try {
        for (int k = 0; k < num_classes; ++k) {
            const auto fields = last_tokens(lines[static_cast<std::size_t>(k) + 1], 4);
            if (fields.size() != 4) return std::nullopt;
            ClassMetrics m;
            m.precision = std::stod(fields[0]);
            m.recall = std::stod(fields[1]);
            m.f1 = std::stod(fields[2]);
            m.support = std::stol(fields[3]);
            parsed.per_class.push_back(m);
        }
        const auto acc = last_tokens(lines[static_cast<std::size_t>(num_classes) + 1], 1);
        const auto macro = last_tokens(lines[static_cast<std::size_t>(num_classes) + 2], 1);
        const auto weighted = last_tokens(lines[static_cast<std::size_t>(num_classes) + 3], 1);
        if (acc.empty() || macro.empty() || weighted.empty()) return std::nullopt;
        parsed.accuracy = std::stod(acc[0]);
        parsed.macro_f1 = std::stod(macro[0]);
        parsed.weighted_f1 = std::stod(weighted[0]);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return parsed;
}

}  // namespace pgkd
