#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/metrics.hpp"
#include "pgkd/student.hpp"
#include "pgkd/teacher.hpp"

namespace pgkd {

// Loop-level knobs. Defaults mirror the reference protocol: 10 distillation
// steps, patience 5, batches of 32 generated samples, and 16-element few-shot
// / correct / incorrect / hard-negative blocks.
struct PGKDConfig {
    int num_kd_steps = 10;
    int patience_limit = 5;
    int gen_batch_size = 32;
    int few_shot_k = 16;
    int correct_k = 16;
    int incorrect_k = 16;
    int hard_negative_k = 16;
    bool use_validation_report = true;
    bool use_hard_negatives = true;
    int retries = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_kd_steps < 0) throw Error("num_kd_steps must be >= 0");
        if (patience_limit < 0) throw Error("patience_limit must be >= 0");
        if (gen_batch_size < 1) throw Error("gen_batch_size must be positive");
        if (few_shot_k < 1) throw Error("few_shot_k must be positive");
        if (correct_k < 0 || incorrect_k < 0 || hard_negative_k < 0) {
            throw Error("sample block sizes must be >= 0");
        }
        if (retries < 0) throw Error("retries must be >= 0");
    }
};

// One row of the run record. Step 0 is the baseline evaluation of model^0;
// every later step carries the teacher interaction that produced it.
// duration_ms is kept for in-process reporting but stays out of the canonical
// serialized manifest so that identical runs serialize byte-identically.
struct StepRecord {
    int step = 0;
    double val_loss = 0.0;
    ClassificationReport report;
    int generated = 0;
    int accepted = 0;
    int rejected = 0;
    TokenUsage tokens;
    long history_size = 0;  // after the step
    std::string prompt;     // traced teacher prompt; empty for step 0
    std::optional<std::string> generation_failure;
    double duration_ms = 0.0;
};

struct RunManifest {
    nlohmann::ordered_json config;
    std::vector<std::string> taxonomy_names;
    std::vector<long> train_ids;
    std::vector<long> val_ids;
    std::vector<StepRecord> steps;
    int best_step = 0;
    double best_val_loss = 0.0;
    ClassificationReport final_report;  // best model on validation
    std::optional<ClassificationReport> test_report;
};

// ---- serialization ---------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const ClassificationReport& report) {
    nlohmann::ordered_json j;
    j["accuracy"] = report.accuracy;
    j["macro_f1"] = report.macro_f1;
    j["weighted_f1"] = report.weighted_f1;
    j["total"] = report.total;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& m : report.per_class) {
        rows.push_back(nlohmann::ordered_json{{"precision", m.precision},
                                              {"recall", m.recall},
                                              {"f1", m.f1},
                                              {"support", m.support}});
    }
    j["per_class"] = std::move(rows);
    return j;
}

inline ClassificationReport report_from_json(const nlohmann::json& j) {
    ClassificationReport report;
    report.accuracy = j.at("accuracy").get<double>();
    report.macro_f1 = j.at("macro_f1").get<double>();
    report.weighted_f1 = j.at("weighted_f1").get<double>();
    report.total = j.at("total").get<long>();
    for (const auto& row : j.at("per_class")) {
        report.per_class.push_back({row.at("precision").get<double>(),
                                    row.at("recall").get<double>(), row.at("f1").get<double>(),
                                    row.at("support").get<long>()});
    }
    return report;
}

inline nlohmann::ordered_json manifest_to_json(const RunManifest& manifest,
                                               bool include_timing = false) {
    nlohmann::ordered_json j;
    j["format"] = "pgkd-manifest-v1";
    j["config"] = manifest.config;
    j["taxonomy"] = manifest.taxonomy_names;
    j["train_ids"] = manifest.train_ids;
    j["val_ids"] = manifest.val_ids;
    auto steps = nlohmann::ordered_json::array();
    for (const auto& s : manifest.steps) {
        nlohmann::ordered_json row;
        row["step"] = s.step;
        row["val_loss"] = s.val_loss;
        row["report"] = report_to_json(s.report);
        row["generated"] = s.generated;
        row["accepted"] = s.accepted;
        row["rejected"] = s.rejected;
        row["input_tokens"] = s.tokens.input_tokens;
        row["output_tokens"] = s.tokens.output_tokens;
        row["history_size"] = s.history_size;
        row["prompt"] = s.prompt;
        if (s.generation_failure) row["generation_failure"] = *s.generation_failure;
        if (include_timing) row["duration_ms"] = s.duration_ms;
        steps.push_back(std::move(row));
    }
    j["steps"] = std::move(steps);
    j["best_step"] = manifest.best_step;
    j["best_val_loss"] = manifest.best_val_loss;
    j["final_report"] = report_to_json(manifest.final_report);
    if (manifest.test_report) j["test_report"] = report_to_json(*manifest.test_report);
    return j;
}

inline std::string manifest_to_string(const RunManifest& manifest) {
    return manifest_to_json(manifest).dump(2) + "\n";
}

inline RunManifest manifest_from_json(const nlohmann::ordered_json& j) {
    if (j.value("format", "") != "pgkd-manifest-v1") {
        throw Error("not a run manifest");
    }
    RunManifest manifest;
    manifest.config = j.at("config");
    manifest.taxonomy_names = j.at("taxonomy").get<std::vector<std::string>>();
    manifest.train_ids = j.at("train_ids").get<std::vector<long>>();
    manifest.val_ids = j.at("val_ids").get<std::vector<long>>();
    for (const auto& row : j.at("steps")) {
        StepRecord s;
        s.step = row.at("step").get<int>();
        s.val_loss = row.at("val_loss").get<double>();
        s.report = report_from_json(row.at("report"));
        s.generated = row.at("generated").get<int>();
        s.accepted = row.at("accepted").get<int>();
        s.rejected = row.at("rejected").get<int>();
        s.tokens.input_tokens = row.at("input_tokens").get<long>();
        s.tokens.output_tokens = row.at("output_tokens").get<long>();
        s.history_size = row.at("history_size").get<long>();
        s.prompt = row.at("prompt").get<std::string>();
        if (row.contains("generation_failure")) {
            s.generation_failure = row.at("generation_failure").get<std::string>();
        }
        if (row.contains("duration_ms")) s.duration_ms = row.at("duration_ms").get<double>();
        manifest.steps.push_back(std::move(s));
    }
    manifest.best_step = j.at("best_step").get<int>();
    manifest.best_val_loss = j.at("best_val_loss").get<double>();
    manifest.final_report = report_from_json(j.at("final_report"));
    if (j.contains("test_report")) {
        manifest.test_report = report_from_json(j.at("test_report"));
    }
    return manifest;
}

// Per-step delimited table for plotting.
inline std::string metrics_table(const RunManifest& manifest) {
    std::string out =
        "step\tval_loss\taccuracy\tmacro_f1\tweighted_f1\tgenerated\taccepted\trejected\t"
        "input_tokens\toutput_tokens\thistory_size\n";
    char row[512];
    for (const auto& s : manifest.steps) {
        std::snprintf(row, sizeof(row), "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%d\t%d\t%d\t%ld\t%ld\t%ld\n",
                      s.step, s.val_loss, s.report.accuracy, s.report.macro_f1,
                      s.report.weighted_f1, s.generated, s.accepted, s.rejected,
                      s.tokens.input_tokens, s.tokens.output_tokens, s.history_size);
        out += row;
    }
    return out;
}

struct ManifestCheck {
    bool ok = true;
    std::string detail;
};

// Re-derives the best-model selection and the patience bookkeeping from the
// recorded loss column alone; the manifest must support this without
// re-running anything.
inline ManifestCheck verify_manifest(const RunManifest& manifest, int num_kd_steps,
                                     int patience_limit) {
    auto fail = [](std::string why) { return ManifestCheck{false, std::move(why)}; };
    if (manifest.steps.empty() || manifest.steps.front().step != 0) {
        return fail("missing baseline step");
    }
    double best = std::numeric_limits<double>::infinity();
    int best_step = 0;
    int streak = 0;
    bool terminated = false;
    for (const auto& s : manifest.steps) {
        if (s.step == 0) {
            best = s.val_loss;
            best_step = 0;
            continue;
        }
        if (terminated) return fail("steps recorded after patience termination");
        if (s.val_loss > best) {
            ++streak;
            if (streak > patience_limit) terminated = true;
        } else {
            best = s.val_loss;
            best_step = s.step;
            streak = 0;
        }
    }
    if (manifest.best_step != best_step) return fail("best_step mismatch");
    if (manifest.best_val_loss != best) return fail("best_val_loss mismatch");
    if (!terminated && manifest.steps.size() != static_cast<std::size_t>(num_kd_steps) + 1) {
        return fail("run neither completed all steps nor terminated on patience");
    }
    for (std::size_t i = 1; i < manifest.steps.size(); ++i) {
        const auto& prev = manifest.steps[i - 1];
        const auto& cur = manifest.steps[i];
        if (cur.history_size != prev.history_size + cur.accepted) {
            return fail("history size not additive at step " + std::to_string(cur.step));
        }
    }
    return {};
}

// ---- the loop --------------------------------------------------------------

struct PGKDResult {
    StudentModel model;
    RunManifest manifest;
    std::vector<LabeledSample> history;  // final training history, append-only
};

namespace detail {

inline std::vector<AnnotatedSample> annotate_subset(const std::vector<LabeledSample>& samples,
                                                    const std::vector<PredictionRecord>& records,
                                                    std::size_t k, int num_classes, Rng& rng) {
    std::unordered_map<long, int> predicted;
    predicted.reserve(records.size());
    for (const auto& r : records) predicted.emplace(r.sample_id, r.predicted_label);

    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    std::vector<std::size_t> picked = select_stratified(labels, k, num_classes, rng);
    std::sort(picked.begin(), picked.end());

    std::vector<AnnotatedSample> out;
    out.reserve(picked.size());
    for (std::size_t i : picked) {
        out.push_back({samples[i], predicted.at(samples[i].id)});
    }
    return out;
}

inline nlohmann::ordered_json config_snapshot(const PGKDConfig& pgkd, const StudentConfig& student,
                                              const FeaturizerConfig& featurizer) {
    nlohmann::ordered_json j;
    j["pgkd"] = {{"num_kd_steps", pgkd.num_kd_steps},
                 {"patience_limit", pgkd.patience_limit},
                 {"gen_batch_size", pgkd.gen_batch_size},
                 {"few_shot_k", pgkd.few_shot_k},
                 {"correct_k", pgkd.correct_k},
                 {"incorrect_k", pgkd.incorrect_k},
                 {"hard_negative_k", pgkd.hard_negative_k},
                 {"use_validation_report", pgkd.use_validation_report},
                 {"use_hard_negatives", pgkd.use_hard_negatives},
                 {"retries", pgkd.retries},
                 {"seed", pgkd.seed}};
    j["student"] = {{"epochs", student.epochs},
                    {"batch_size", student.batch_size},
                    {"learning_rate", student.learning_rate},
                    {"patience", student.patience},
                    {"seed", student.seed}};
    j["featurizer"] = {{"ngram_orders", featurizer.ngram_orders},
                       {"dimension", featurizer.dimension},
                       {"hash_seed", featurizer.hash_seed},
                       {"max_tokens", featurizer.max_tokens}};
    return j;
}

}  // namespace detail

// Performance-guided distillation. Trains model^0 on the seed training set,
// then iterates: partition the training history under the current model, mine
// hard negatives, ask the teacher for new samples conditioned on the latest
// validation report, retrain a fresh student on the grown history, and
// re-evaluate. Validation loss drives patience-limited early stopping, and
// the best-by-validation-loss snapshot is what comes back.
//
// Teacher failures never abort a run: a step with zero accepted samples still
// retrains and re-evaluates, so the loop control sees every step.
inline PGKDResult run_pgkd(const Taxonomy& taxonomy, const FeaturizerConfig& featurizer_config,
                           const DatasetSplit& split, const StudentConfig& student_config,
                           TeacherBackend& teacher, const PGKDConfig& config,
                           const std::vector<LabeledSample>* test_set = nullptr) {
    config.validate();
    student_config.validate();
    if (split.train.empty() || split.val.empty()) throw EmptyDataset();

    using clock = std::chrono::steady_clock;

    RunManifest manifest;
    manifest.config = detail::config_snapshot(config, student_config, featurizer_config);
    manifest.taxonomy_names = taxonomy.classes();
    for (const auto& s : split.train) manifest.train_ids.push_back(s.id);
    for (const auto& s : split.val) manifest.val_ids.push_back(s.id);

    std::vector<LabeledSample> history = split.train;
    std::unordered_set<std::string> guard_texts;  // history plus validation
    long next_id = 0;
    for (const auto& s : history) {
        guard_texts.insert(s.text);
        next_id = std::max(next_id, s.id + 1);
    }
    for (const auto& s : split.val) {
        guard_texts.insert(s.text);
        next_id = std::max(next_id, s.id + 1);
    }

    const auto t0 = clock::now();
    TrainResult current = train(taxonomy, featurizer_config, history, split.val, student_config);
    Evaluation val_eval = evaluate(current.model, split.val);

    StudentModel best_model = current.model;
    double best_val_loss = val_eval.loss;
    manifest.best_step = 0;

    StepRecord baseline;
    baseline.step = 0;
    baseline.val_loss = val_eval.loss;
    baseline.report = val_eval.report;
    baseline.history_size = static_cast<long>(history.size());
    baseline.duration_ms =
        std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    manifest.steps.push_back(std::move(baseline));

    std::string val_report_text = render_report(val_eval.report, taxonomy);
    int patience_counter = 0;

    for (int step = 1; step <= config.num_kd_steps; ++step) {
        const auto step_start = clock::now();

        // Current model's view of the training history.
        Evaluation history_eval = evaluate(current.model, history);
        Partition parts = partition(history_eval.records, history);
        std::vector<HardNegative> hard = mine_hard_negatives(
            history_eval.records, history, static_cast<std::size_t>(config.hard_negative_k));

        Rng select_rng(mix_seed(config.seed, 0x5e1ec7ull + static_cast<std::uint64_t>(step)));
        PromptContext ctx;
        ctx.taxonomy = taxonomy;
        {
            std::vector<int> labels;
            labels.reserve(history.size());
            for (const auto& s : history) labels.push_back(s.label);
            for (std::size_t i : select_stratified(labels, static_cast<std::size_t>(config.few_shot_k),
                                                   taxonomy.size(), select_rng)) {
                ctx.few_shot.push_back(history[i]);
            }
        }
        ctx.gen_batch_size = config.gen_batch_size;
        if (config.use_validation_report) ctx.report_text = val_report_text;
        ctx.correct = detail::annotate_subset(parts.correct, history_eval.records,
                                              static_cast<std::size_t>(config.correct_k),
                                              taxonomy.size(), select_rng);
        ctx.incorrect = detail::annotate_subset(parts.incorrect, history_eval.records,
                                                static_cast<std::size_t>(config.incorrect_k),
                                                taxonomy.size(), select_rng);
        if (config.use_hard_negatives) ctx.hard_negatives = hard;

        GenerationOutcome outcome =
            generate(teacher, ctx, config.retries, guard_texts, step, next_id);

        for (const auto& s : outcome.batch.accepted) {
            guard_texts.insert(s.text);
            history.push_back(s);
        }
        next_id += static_cast<long>(outcome.batch.accepted.size());

        StudentConfig step_config = student_config;
        step_config.seed = mix_seed(student_config.seed, 0x57d0ull + static_cast<std::uint64_t>(step));
        current = train(taxonomy, featurizer_config, history, split.val, step_config);
        val_eval = evaluate(current.model, split.val);
        val_report_text = render_report(val_eval.report, taxonomy);

        StepRecord record;
        record.step = step;
        record.val_loss = val_eval.loss;
        record.report = val_eval.report;
        record.generated =
            static_cast<int>(outcome.batch.accepted.size() + outcome.batch.rejected.size());
        record.accepted = static_cast<int>(outcome.batch.accepted.size());
        record.rejected = static_cast<int>(outcome.batch.rejected.size());
        record.tokens = outcome.usage;
        record.history_size = static_cast<long>(history.size());
        record.prompt = outcome.prompt;
        record.generation_failure = outcome.failure;
        record.duration_ms =
            std::chrono::duration<double, std::milli>(clock::now() - step_start).count();
        manifest.steps.push_back(std::move(record));

        if (val_eval.loss > best_val_loss) {
            ++patience_counter;
            if (patience_counter > config.patience_limit) break;
        } else {
            best_val_loss = val_eval.loss;
            best_model = current.model;
            manifest.best_step = step;
            patience_counter = 0;
        }
    }

    manifest.best_val_loss = best_val_loss;
    manifest.final_report = evaluate(best_model, split.val).report;
    if (test_set && !test_set->empty()) {
        manifest.test_report = evaluate(best_model, *test_set).report;
    }
    return {std::move(best_model), std::move(manifest), std::move(history)};
}

}  // namespace pgkd
