#pragma once

// Independent oracles used by the unit and acceptance suites. Everything in
// this header recomputes expectations through a different route than the
// library code it checks.

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/student.hpp"
#include "pgkd/teacher.hpp"
#include "pgkd/text.hpp"

namespace pgkd::testing {

// ---- classification metrics -------------------------------------------------

struct OracleReport {
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    std::vector<long> support;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
};

// Recomputes the report from raw (true, predicted) pairs. F1 is computed as
// 2*TP / (predicted + actual) rather than from precision/recall, so the two
// routes agree only if both are right.
inline OracleReport brute_force_report(const std::vector<std::pair<int, int>>& pairs,
                                       int num_classes) {
    OracleReport r;
    r.precision.assign(num_classes, 0.0);
    r.recall.assign(num_classes, 0.0);
    r.f1.assign(num_classes, 0.0);
    r.support.assign(num_classes, 0);
    long matches = 0;
    for (int c = 0; c < num_classes; ++c) {
        long tp = 0;
        long predicted = 0;
        long actual = 0;
        for (const auto& [t, p] : pairs) {
            if (t == c && p == c) ++tp;
            if (p == c) ++predicted;
            if (t == c) ++actual;
        }
        r.support[c] = actual;
        if (predicted > 0) r.precision[c] = static_cast<double>(tp) / predicted;
        if (actual > 0) r.recall[c] = static_cast<double>(tp) / actual;
        if (predicted + actual > 0) {
            r.f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + actual);
        }
    }
    for (const auto& [t, p] : pairs) {
        if (t == p) ++matches;
    }
    const long total = static_cast<long>(pairs.size());
    if (total > 0) r.accuracy = static_cast<double>(matches) / total;
    double f1_sum = 0.0;
    double weighted = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        f1_sum += r.f1[c];
        weighted += r.f1[c] * static_cast<double>(r.support[c]);
    }
    if (num_classes > 0) r.macro_f1 = f1_sum / num_classes;
    if (total > 0) r.weighted_f1 = weighted / total;
    return r;
}

// ---- losses and gradients ----------------------------------------------------

// Naive per-sample cross-entropy: plain softmax, then -log of the true-class
// probability, summed and divided at the end.
inline double naive_mean_cross_entropy(const StudentModel& model,
                                       const std::vector<SparseVector>& features,
                                       const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const std::vector<double> p = model.predict_proba(features[i]);
        total += -std::log(p[static_cast<std::size_t>(labels[i])]);
    }
    return total / static_cast<double>(features.size());
}

// Central finite differences of the batch loss with respect to every weight
// and bias coordinate.
inline Gradient finite_difference_gradient(StudentModel model,
                                           const std::vector<SparseVector>& features,
                                           const std::vector<int>& labels, double h = 1e-6) {
    Gradient g;
    g.d_weights.assign(model.weights().size(), 0.0);
    g.d_bias.assign(model.bias().size(), 0.0);
    auto loss_now = [&] { return mean_cross_entropy(model, features, labels); };
    for (std::size_t i = 0; i < model.weights().size(); ++i) {
        const double saved = model.weights()[i];
        model.weights()[i] = saved + h;
        const double up = loss_now();
        model.weights()[i] = saved - h;
        const double down = loss_now();
        model.weights()[i] = saved;
        g.d_weights[i] = (up - down) / (2.0 * h);
    }
    for (std::size_t i = 0; i < model.bias().size(); ++i) {
        const double saved = model.bias()[i];
        model.bias()[i] = saved + h;
        const double up = loss_now();
        model.bias()[i] = saved - h;
        const double down = loss_now();
        model.bias()[i] = saved;
        g.d_bias[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Max-norm relative disagreement between two gradients.
inline double gradient_relative_error(const Gradient& a, const Gradient& b) {
    double max_diff = 0.0;
    double max_ref = 0.0;
    for (std::size_t i = 0; i < a.d_weights.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(a.d_weights[i] - b.d_weights[i]));
        max_ref = std::max(max_ref, std::fabs(b.d_weights[i]));
    }
    for (std::size_t i = 0; i < a.d_bias.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(a.d_bias[i] - b.d_bias[i]));
        max_ref = std::max(max_ref, std::fabs(b.d_bias[i]));
    }
    return max_diff / std::max(max_ref, 1e-12);
}

// ---- strict reference parser --------------------------------------------------

// Re-derives the accept/reject verdict for every element of an extracted
// payload, independently of parse_generation.
struct ReferenceVerdicts {
    std::vector<std::pair<std::string, int>> accepted;  // (trimmed text, label id)
    std::vector<std::pair<std::string, std::string>> rejected;  // (raw dump, reason)
};

inline ReferenceVerdicts reference_parse(const nlohmann::json& payload, const Taxonomy& taxonomy,
                                         const std::unordered_set<std::string>& history) {
    ReferenceVerdicts out;
    std::unordered_set<std::string> seen = history;
    for (const auto& el : payload) {
        if (!el.is_object()) {
            out.rejected.emplace_back(el.dump(), "not_an_object");
            continue;
        }
        const bool has_text = el.contains("text") && el.at("text").is_string();
        if (!has_text) {
            out.rejected.emplace_back(el.dump(), "missing_text");
            continue;
        }
        if (!el.contains("label")) {
            out.rejected.emplace_back(el.dump(), "missing_label");
            continue;
        }
        const std::string text = trim(el.at("text").get<std::string>());
        if (text.empty()) {
            out.rejected.emplace_back(el.dump(), "empty_text");
            continue;
        }
        std::optional<int> label;
        if (el.at("label").is_string()) label = taxonomy.id_of(el.at("label").get<std::string>());
        if (!label) {
            out.rejected.emplace_back(el.dump(), "unknown_label");
            continue;
        }
        if (seen.count(text)) {
            out.rejected.emplace_back(el.dump(), "duplicate_text");
            continue;
        }
        seen.insert(text);
        out.accepted.emplace_back(text, *label);
    }
    return out;
}

}  // namespace pgkd::testing
