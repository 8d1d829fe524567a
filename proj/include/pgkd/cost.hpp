#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "pgkd/errors.hpp"
#include "pgkd/loop.hpp"

namespace pgkd {

struct Pricing {
    double input_per_1k = 0.0;   // dollars per 1k input tokens
    double output_per_1k = 0.0;  // dollars per 1k output tokens
};

// Measured wall-clock times for student inference over one 64-sample batch
// (the batch unit of the reference protocol). Cost derives from the hourly
// instance rate when one is supplied.
struct BatchTimings {
    std::vector<double> batch_seconds;
    double instance_hourly_rate = 0.0;
};

struct CostRecord {
    long input_tokens = 0;
    long output_tokens = 0;
    double teacher_cost = 0.0;
    std::optional<double> student_latency_s;  // mean over measurements
    std::optional<double> student_cost;
};

inline CostRecord estimate_cost_latency(const RunManifest& manifest, const Pricing& pricing,
                                        const std::optional<BatchTimings>& measured = std::nullopt) {
    if (pricing.input_per_1k < 0.0 || pricing.output_per_1k < 0.0) {
        throw Error("pricing rates must be non-negative");
    }
    CostRecord record;
    for (const auto& s : manifest.steps) {
        record.input_tokens += s.tokens.input_tokens;
        record.output_tokens += s.tokens.output_tokens;
    }
    record.teacher_cost = static_cast<double>(record.input_tokens) * pricing.input_per_1k / 1000.0 +
                          static_cast<double>(record.output_tokens) * pricing.output_per_1k / 1000.0;
    if (measured && !measured->batch_seconds.empty()) {
        double total = 0.0;
        for (double s : measured->batch_seconds) total += s;
        const double mean = total / static_cast<double>(measured->batch_seconds.size());
        record.student_latency_s = mean;
        if (measured->instance_hourly_rate > 0.0) {
            record.student_cost = mean / 3600.0 * measured->instance_hourly_rate;
        }
    }
    return record;
}

// Method / latency / cost / tokens table comparing the teacher side of the
// run with measured student inference.
inline std::string render_cost_table(const CostRecord& record) {
    std::string out = "method           latency_s     cost_usd       tokens\n";
    char row[256];
    std::snprintf(row, sizeof(row), "%-15s  %10s  %11.4f  %11ld\n", "teacher", "-",
                  record.teacher_cost, record.input_tokens + record.output_tokens);
    out += row;
    char latency[32];
    if (record.student_latency_s) {
        std::snprintf(latency, sizeof(latency), "%10.3f", *record.student_latency_s);
    } else {
        std::snprintf(latency, sizeof(latency), "%10s", "-");
    }
    char cost[32];
    if (record.student_cost) {
        std::snprintf(cost, sizeof(cost), "%11.4f", *record.student_cost);
    } else {
        std::snprintf(cost, sizeof(cost), "%11s", "-");
    }
    std::snprintf(row, sizeof(row), "%-15s  %10s  %11s  %11s\n", "student-batch64", latency, cost,
                  "-");
    out += row;
    return out;
}

}  // namespace pgkd
