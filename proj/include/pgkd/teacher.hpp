#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/json_extract.hpp"
#include "pgkd/metrics.hpp"
#include "pgkd/rng.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

struct TokenUsage {
    long input_tokens = 0;
    long output_tokens = 0;

    TokenUsage& operator+=(const TokenUsage& other) {
        input_tokens += other.input_tokens;
        output_tokens += other.output_tokens;
        return *this;
    }
};

struct CompletionResult {
    bool ok = false;
    std::string text;   // raw model output when ok
    std::string error;  // transport error otherwise
    TokenUsage usage;

    static CompletionResult success(std::string response, TokenUsage usage) {
        return {true, std::move(response), {}, usage};
    }
    static CompletionResult failure(std::string error) { return {false, {}, std::move(error), {}}; }
};

// Chat-completion style backend: one prompt in, one raw response out. Token
// usage is reported per call; callers accumulate.
class TeacherBackend {
public:
    virtual ~TeacherBackend() = default;
    virtual CompletionResult complete(const std::string& prompt) = 0;
    // Backends are only required to be safe for sequential use; fan-out
    // callers must check this.
    virtual bool concurrent_safe() const { return false; }
};

struct AnnotatedSample {
    LabeledSample sample;
    int predicted_label = 0;
};

// Everything that goes into one teacher prompt. report_text and
// hard_negatives are optional so the two ablations are expressed by absence.
struct PromptContext {
    Taxonomy taxonomy;
    std::vector<LabeledSample> few_shot;
    int gen_batch_size = 32;
    std::optional<std::string> report_text;
    std::vector<AnnotatedSample> correct;
    std::vector<AnnotatedSample> incorrect;
    std::optional<std::vector<HardNegative>> hard_negatives;
};

namespace detail {

inline std::string taxonomy_line(const Taxonomy& taxonomy) {
    nlohmann::json names = taxonomy.classes();
    return names.dump();
}

inline std::string sample_line(const LabeledSample& s, const Taxonomy& taxonomy) {
    nlohmann::ordered_json j;
    j["text"] = s.text;
    j["label"] = taxonomy.name_of(s.label);
    return j.dump();
}

inline std::string annotated_line(const AnnotatedSample& a, const Taxonomy& taxonomy) {
    nlohmann::ordered_json j;
    j["text"] = a.sample.text;
    j["label"] = taxonomy.name_of(a.sample.label);
    j["predicted"] = taxonomy.name_of(a.predicted_label);
    return j.dump();
}

inline std::string hard_negative_line(const HardNegative& h, const Taxonomy& taxonomy) {
    nlohmann::ordered_json j;
    j["text"] = h.sample.text;
    j["label"] = taxonomy.name_of(h.sample.label);
    j["predicted"] = taxonomy.name_of(h.predicted_label);
    j["confidence"] = std::round(h.confidence * 1000.0) / 1000.0;
    return j.dump();
}

inline void append_block_text(std::vector<std::string>& lines, const std::string& block) {
    std::size_t pos = 0;
    while (pos < block.size()) {
        std::size_t nl = block.find('\n', pos);
        if (nl == std::string::npos) nl = block.size();
        lines.emplace_back(block.substr(pos, nl - pos));
        pos = nl + 1;
    }
}

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

}  // namespace detail

// Generation prompt. The scaffolding text is fixed; five slots are filled
// from the context. Omitting report_text drops the "...generate new samples
// knowing that the classification report over validation set is:" clause and
// its payload; omitting hard_negatives drops the "high confidence" block.
inline std::string build_pgkd_prompt(const PromptContext& ctx) {
    if (ctx.few_shot.empty()) throw EmptyFewShot();

    std::vector<std::string> lines;
    lines.emplace_back("Human:");
    lines.emplace_back(
        "You are a Teacher model for a Student LM to perform topic detection on the following "
        "taxonomy: ");
    lines.push_back(detail::taxonomy_line(ctx.taxonomy));
    lines.emplace_back("Here are a few labeled examples that show the correct label for this task:");
    for (const auto& s : ctx.few_shot) lines.push_back(detail::sample_line(s, ctx.taxonomy));

    std::string request =
        "Given the current model performance, please generate " +
        std::to_string(ctx.gen_batch_size) +
        " training samples for the model to improve its performance. The response should be a "
        "list of dictionaries in JSON format, the response needs to be parsable so do not output "
        "anything else rather than the response itself. The objective is to maximize the model "
        "accuracy";
    if (ctx.report_text) {
        request +=
            ", generate new samples knowing that the classification report over validation set "
            "is:";
        lines.push_back(std::move(request));
        detail::append_block_text(lines, *ctx.report_text);
    } else {
        request += ".";
        lines.push_back(std::move(request));
    }

    lines.emplace_back("Please consider a few samples that the model was able to classify correctly:");
    for (const auto& a : ctx.correct) lines.push_back(detail::annotated_line(a, ctx.taxonomy));
    lines.emplace_back("And samples the model was not able to classify correctly: ");
    for (const auto& a : ctx.incorrect) lines.push_back(detail::annotated_line(a, ctx.taxonomy));
    if (ctx.hard_negatives) {
        lines.emplace_back(
            "The model has a high confidence in classifying the following misclassified examples:");
        for (const auto& h : *ctx.hard_negatives) {
            lines.push_back(detail::hard_negative_line(h, ctx.taxonomy));
        }
    }
    lines.emplace_back("Assistant:");
    return detail::join_lines(lines);
}

// Zero-shot classification prompt ("Text-to-classifiy" spelling is verbatim
// from the original template).
inline std::string build_zero_shot_prompt(const Taxonomy& taxonomy, const std::string& text) {
    if (trim_view(text).empty()) throw EmptyText(0);

    std::vector<std::string> lines;
    lines.emplace_back("Human:");
    lines.emplace_back(
        "You are an AI assistant, and you are tasked to perform topic classification starting "
        "from text. You are asked to classify text in topics categories. You are only allowed to "
        "choose one of the following categories:");
    lines.push_back(detail::taxonomy_line(taxonomy));
    lines.emplace_back("Please provide only one category for each text in JSON format. For example: ");
    lines.emplace_back("\"class_label\": , \"class_names\": \"\"");
    lines.emplace_back(
        "Please do not repeat or return the content back again, just provide the category in the "
        "defined format.");
    lines.emplace_back("Text-to-classifiy: ");
    lines.push_back(text);
    lines.emplace_back("Assistant:");
    return detail::join_lines(lines);
}

namespace reject_reason {
inline constexpr std::string_view kNotAnObject = "not_an_object";
inline constexpr std::string_view kMissingText = "missing_text";
inline constexpr std::string_view kMissingLabel = "missing_label";
inline constexpr std::string_view kEmptyText = "empty_text";
inline constexpr std::string_view kUnknownLabel = "unknown_label";
inline constexpr std::string_view kDuplicateText = "duplicate_text";
inline constexpr std::string_view kOverflow = "overflow";
}  // namespace reject_reason

struct RejectedRecord {
    std::string raw;
    std::string reason;
};

struct GenerationBatch {
    std::vector<LabeledSample> accepted;
    std::vector<RejectedRecord> rejected;
    std::string raw_response;
};

// Validates each extracted record: text and label must be present, the label
// must resolve in the taxonomy, the text must be non-empty and not an exact
// duplicate of any history text or of an earlier record in the same batch.
inline GenerationBatch parse_generation(const std::string& raw, const Taxonomy& taxonomy, int step,
                                        const std::unordered_set<std::string>& history_texts,
                                        long id_base = 0) {
    auto payload = extract_record_array(raw);
    if (!payload) {
        const std::string head = raw.substr(0, std::min<std::size_t>(raw.size(), 80));
        throw UnparsableResponse(head);
    }

    GenerationBatch batch;
    batch.raw_response = raw;
    std::unordered_set<std::string> batch_texts;
    auto reject = [&batch](const nlohmann::json& record, std::string_view reason) {
        batch.rejected.push_back({record.dump(), std::string(reason)});
    };
    for (const auto& record : *payload) {
        if (!record.is_object()) {
            reject(record, reject_reason::kNotAnObject);
            continue;
        }
        if (!record.contains("text") || !record["text"].is_string()) {
            reject(record, reject_reason::kMissingText);
            continue;
        }
        if (!record.contains("label")) {
            reject(record, reject_reason::kMissingLabel);
            continue;
        }
        std::string text = trim(record["text"].get<std::string>());
        if (text.empty()) {
            reject(record, reject_reason::kEmptyText);
            continue;
        }
        std::optional<int> label;
        if (record["label"].is_string()) {
            label = taxonomy.id_of(record["label"].get<std::string>());
        }
        if (!label) {
            reject(record, reject_reason::kUnknownLabel);
            continue;
        }
        if (history_texts.count(text) || batch_texts.count(text)) {
            reject(record, reject_reason::kDuplicateText);
            continue;
        }
        batch_texts.insert(text);
        batch.accepted.push_back({id_base + static_cast<long>(batch.accepted.size()),
                                  std::move(text), *label, Origin::generated(step)});
    }
    return batch;
}

struct GenerationOutcome {
    std::string prompt;
    GenerationBatch batch;
    TokenUsage usage;  // summed across attempts
    int attempts = 0;
    std::optional<std::string> failure;  // set when every attempt failed
};

// One teacher round: build the prompt, call the backend, parse. Transport
// errors and unparsable responses are retried up to `retries` extra times;
// after exhaustion the outcome carries an empty batch plus the failure, and
// the caller's loop goes on.
inline GenerationOutcome generate(TeacherBackend& backend, const PromptContext& ctx, int retries,
                                  const std::unordered_set<std::string>& history_texts, int step,
                                  long id_base = 0) {
    if (retries < 0) throw Error("retries must be >= 0");
    GenerationOutcome out;
    out.prompt = build_pgkd_prompt(ctx);
    std::string last_error;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        ++out.attempts;
        CompletionResult result = backend.complete(out.prompt);
        out.usage += result.usage;
        if (!result.ok) {
            last_error = result.error;
            continue;
        }
        try {
            out.batch = parse_generation(result.text, ctx.taxonomy, step, history_texts, id_base);
        } catch (const UnparsableResponse& e) {
            last_error = e.what();
            out.batch = {};
            out.batch.raw_response = result.text;
            continue;
        }
        if (out.batch.accepted.size() > static_cast<std::size_t>(ctx.gen_batch_size)) {
            const Taxonomy& tax = ctx.taxonomy;
            for (std::size_t i = static_cast<std::size_t>(ctx.gen_batch_size);
                 i < out.batch.accepted.size(); ++i) {
                const LabeledSample& s = out.batch.accepted[i];
                nlohmann::ordered_json j;
                j["text"] = s.text;
                j["label"] = tax.name_of(s.label);
                out.batch.rejected.push_back({j.dump(), std::string(reject_reason::kOverflow)});
            }
            out.batch.accepted.resize(static_cast<std::size_t>(ctx.gen_batch_size));
        }
        return out;
    }
    out.failure = last_error.empty() ? std::string("retries exhausted") : last_error;
    return out;
}

// Pulls a class id out of a zero-shot response: the "class_names" field of
// the first JSON object, falling back to an in-range "class_label" id, then
// to the whole trimmed response being a class name.
inline std::optional<int> parse_zero_shot_response(const std::string& raw,
                                                   const Taxonomy& taxonomy) {
    const std::string_view s = raw;
    for (std::size_t pos = s.find('{'); pos != std::string_view::npos;
         pos = s.find('{', pos + 1)) {
        const std::size_t end = detail::balanced_end(s, pos);
        if (end == std::string_view::npos) break;
        nlohmann::json parsed = nlohmann::json::parse(s.substr(pos, end - pos), nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) continue;
        if (parsed.contains("class_names") && parsed["class_names"].is_string()) {
            if (auto id = taxonomy.id_of(parsed["class_names"].get<std::string>())) return id;
        }
        if (parsed.contains("class_label") && parsed["class_label"].is_number_integer()) {
            const auto id = parsed["class_label"].get<long>();
            if (id >= 0 && id < taxonomy.size()) return static_cast<int>(id);
        }
        return std::nullopt;  // object present but no usable category
    }
    return taxonomy.id_of(trim(raw));
}

struct ZeroShotResult {
    std::vector<int> predictions;  // -1 marks a failed classification
    int failures = 0;
    TokenUsage usage;
};

// One prompt per text. Unmatchable responses count as failures and stay out
// of downstream metrics. Fan-out is used only when the backend declares
// itself safe for concurrent calls; results are ordered by input index
// either way.
inline ZeroShotResult zero_shot_classify(TeacherBackend& backend, const Taxonomy& taxonomy,
                                         const std::vector<std::string>& texts, int workers = 1) {
    if (texts.empty()) throw EmptyDataset();
    ZeroShotResult out;
    out.predictions.assign(texts.size(), -1);

    const int usable_workers =
        backend.concurrent_safe() ? std::max(1, workers) : 1;

    auto classify_range = [&](std::size_t begin, std::size_t stride, TokenUsage& usage,
                              int& failures) {
        for (std::size_t i = begin; i < texts.size(); i += stride) {
            const std::string prompt = build_zero_shot_prompt(taxonomy, texts[i]);
            CompletionResult result = backend.complete(prompt);
            usage += result.usage;
            if (!result.ok) {
                ++failures;
                continue;
            }
            if (auto id = parse_zero_shot_response(result.text, taxonomy)) {
                out.predictions[i] = *id;
            } else {
                ++failures;
            }
        }
    };

    if (usable_workers == 1 || texts.size() < 2) {
        classify_range(0, 1, out.usage, out.failures);
        return out;
    }

    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(usable_workers), texts.size());
    std::vector<TokenUsage> usages(n_threads);
    std::vector<int> failures(n_threads, 0);
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        threads.emplace_back(
            [&, t] { classify_range(t, n_threads, usages[t], failures[t]); });
    }
    for (auto& th : threads) th.join();
    for (std::size_t t = 0; t < n_threads; ++t) {
        out.usage += usages[t];
        out.failures += failures[t];
    }
    return out;
}

// Seeded class-stratified selection: every class bucket is shuffled, the
// class visit order is shuffled, then buckets are drained round-robin until
// k indices are collected. Falls back to plain exhaustion when the pool is
// smaller than k.
inline std::vector<std::size_t> select_stratified(const std::vector<int>& labels, std::size_t k,
                                                  int num_classes, Rng& rng) {
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        buckets[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (auto& bucket : buckets) rng.shuffle(bucket);
    std::vector<int> visit_order;
    for (int c = 0; c < num_classes; ++c) visit_order.push_back(c);
    {
        std::vector<int> tmp = visit_order;
        rng.shuffle(tmp);
        visit_order = tmp;
    }

    std::vector<std::size_t> picked;
    picked.reserve(std::min(k, labels.size()));
    std::vector<std::size_t> cursor(static_cast<std::size_t>(num_classes), 0);
    bool any = true;
    while (picked.size() < k && any) {
        any = false;
        for (int c : visit_order) {
            auto& bucket = buckets[static_cast<std::size_t>(c)];
            auto& cur = cursor[static_cast<std::size_t>(c)];
            if (cur < bucket.size()) {
                picked.push_back(bucket[cur]);
                ++cur;
                any = true;
                if (picked.size() == k) break;
            }
        }
    }
    return picked;
}

}  // namespace pgkd
