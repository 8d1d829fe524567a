#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/cost.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/http_teacher.hpp"
#include "pgkd/loop.hpp"
#include "pgkd/metrics.hpp"
#include "pgkd/mock_teacher.hpp"
#include "pgkd/student.hpp"
#include "pgkd/teacher.hpp"
#include "pgkd/text.hpp"

namespace pgkd {

// Effective configuration of one invocation. Precedence is
// flags > config file > defaults; the CLI layer does the merging and hands a
// fully resolved spec to the commands below.
struct RunSpec {
    std::filesystem::path dataset;
    std::filesystem::path taxonomy_path;
    std::filesystem::path out_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    int seed_size = 1000;
    double train_fraction = 0.8;
    int workers = 1;
    std::string teacher_kind = "mock";  // mock | http
    double mock_quality = 0.0;
    FeaturizerConfig featurizer;
    StudentConfig student;
    PGKDConfig pgkd;
    HttpBackendConfig http;
};

// Overwrites spec fields present in a JSON config file.
inline void apply_config_file(RunSpec& spec, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw UsageError("config file is not a JSON object: " + path.string());
    }
    if (doc.contains("seed_size")) spec.seed_size = doc["seed_size"].get<int>();
    if (doc.contains("seeds")) spec.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    if (doc.contains("train_fraction")) spec.train_fraction = doc["train_fraction"].get<double>();
    if (doc.contains("workers")) spec.workers = doc["workers"].get<int>();
    if (doc.contains("teacher")) spec.teacher_kind = doc["teacher"].get<std::string>();
    if (doc.contains("mock_quality")) spec.mock_quality = doc["mock_quality"].get<double>();
    if (doc.contains("featurizer")) {
        const auto& f = doc["featurizer"];
        if (f.contains("ngram_orders"))
            spec.featurizer.ngram_orders = f["ngram_orders"].get<std::vector<int>>();
        if (f.contains("dimension")) spec.featurizer.dimension = f["dimension"].get<std::uint32_t>();
        if (f.contains("hash_seed")) spec.featurizer.hash_seed = f["hash_seed"].get<std::uint64_t>();
        if (f.contains("max_tokens")) spec.featurizer.max_tokens = f["max_tokens"].get<int>();
    }
    if (doc.contains("student")) {
        const auto& s = doc["student"];
        if (s.contains("epochs")) spec.student.epochs = s["epochs"].get<int>();
        if (s.contains("batch_size")) spec.student.batch_size = s["batch_size"].get<int>();
        if (s.contains("learning_rate"))
            spec.student.learning_rate = s["learning_rate"].get<double>();
        if (s.contains("patience")) spec.student.patience = s["patience"].get<int>();
    }
    if (doc.contains("pgkd")) {
        const auto& p = doc["pgkd"];
        if (p.contains("num_kd_steps")) spec.pgkd.num_kd_steps = p["num_kd_steps"].get<int>();
        if (p.contains("patience_limit")) spec.pgkd.patience_limit = p["patience_limit"].get<int>();
        if (p.contains("gen_batch_size")) spec.pgkd.gen_batch_size = p["gen_batch_size"].get<int>();
        if (p.contains("few_shot_k")) spec.pgkd.few_shot_k = p["few_shot_k"].get<int>();
        if (p.contains("correct_k")) spec.pgkd.correct_k = p["correct_k"].get<int>();
        if (p.contains("incorrect_k")) spec.pgkd.incorrect_k = p["incorrect_k"].get<int>();
        if (p.contains("hard_negative_k"))
            spec.pgkd.hard_negative_k = p["hard_negative_k"].get<int>();
        if (p.contains("use_validation_report"))
            spec.pgkd.use_validation_report = p["use_validation_report"].get<bool>();
        if (p.contains("use_hard_negatives"))
            spec.pgkd.use_hard_negatives = p["use_hard_negatives"].get<bool>();
        if (p.contains("retries")) spec.pgkd.retries = p["retries"].get<int>();
    }
    if (doc.contains("http")) {
        const auto& h = doc["http"];
        if (h.contains("endpoint")) spec.http.endpoint = h["endpoint"].get<std::string>();
        if (h.contains("model")) spec.http.model = h["model"].get<std::string>();
        if (h.contains("temperature")) spec.http.temperature = h["temperature"].get<double>();
        if (h.contains("max_output_tokens"))
            spec.http.max_output_tokens = h["max_output_tokens"].get<int>();
        if (h.contains("timeout_seconds")) spec.http.timeout_seconds = h["timeout_seconds"].get<int>();
        if (h.contains("credential_env")) spec.http.credential_env = h["credential_env"].get<std::string>();
    }
}

namespace detail {

// Seed streams: each derived component gets its own substream so that one
// run seed determines everything.
inline constexpr std::uint64_t kSampleStream = 1;
inline constexpr std::uint64_t kSplitStream = 2;
inline constexpr std::uint64_t kStudentStream = 3;
inline constexpr std::uint64_t kPgkdStream = 4;
inline constexpr std::uint64_t kMockStream = 5;

inline nlohmann::ordered_json spec_config_json(const RunSpec& spec) {
    nlohmann::ordered_json j;
    j["dataset"] = spec.dataset.string();
    j["taxonomy"] = spec.taxonomy_path.string();
    j["seed_size"] = spec.seed_size;
    j["seeds"] = spec.seeds;
    j["train_fraction"] = spec.train_fraction;
    j["teacher"] = spec.teacher_kind;
    j["mock_quality"] = spec.mock_quality;
    j["featurizer"] = {{"ngram_orders", spec.featurizer.ngram_orders},
                       {"dimension", spec.featurizer.dimension},
                       {"hash_seed", spec.featurizer.hash_seed},
                       {"max_tokens", spec.featurizer.max_tokens}};
    j["student"] = {{"epochs", spec.student.epochs},
                    {"batch_size", spec.student.batch_size},
                    {"learning_rate", spec.student.learning_rate},
                    {"patience", spec.student.patience}};
    j["pgkd"] = {{"num_kd_steps", spec.pgkd.num_kd_steps},
                 {"patience_limit", spec.pgkd.patience_limit},
                 {"gen_batch_size", spec.pgkd.gen_batch_size},
                 {"few_shot_k", spec.pgkd.few_shot_k},
                 {"correct_k", spec.pgkd.correct_k},
                 {"incorrect_k", spec.pgkd.incorrect_k},
                 {"hard_negative_k", spec.pgkd.hard_negative_k},
                 {"use_validation_report", spec.pgkd.use_validation_report},
                 {"use_hard_negatives", spec.pgkd.use_hard_negatives},
                 {"retries", spec.pgkd.retries}};
    j["http"] = {{"endpoint", spec.http.endpoint}, {"model", spec.http.model}};
    return j;
}

inline std::string config_hash(const RunSpec& spec) {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(spec_config_json(spec).dump())));
    return hex;
}

// Every emitted table starts with this line.
inline std::string header_line(const RunSpec& spec) {
    std::string line = "# config=" + config_hash(spec) + " seeds=";
    for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
        if (i) line.push_back(',');
        line += std::to_string(spec.seeds[i]);
    }
    line.push_back('\n');
    return line;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path.string());
    out << content;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    if (values.empty()) return out;
    double total = 0.0;
    for (double v : values) total += v;
    out.mean = total / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

inline std::string format_mean_std(const MeanStd& ms) {
    char cell[64];
    std::snprintf(cell, sizeof(cell), "%.3f ± %.3f", ms.mean, ms.std);
    return cell;
}

// Aggregate row over per-seed reports: accuracy / macro-F1 / weighted-F1 as
// mean ± sample standard deviation.
inline std::string aggregate_row(const std::string& method,
                                 const std::vector<ClassificationReport>& reports) {
    std::vector<double> acc;
    std::vector<double> macro;
    std::vector<double> weighted;
    for (const auto& r : reports) {
        acc.push_back(r.accuracy);
        macro.push_back(r.macro_f1);
        weighted.push_back(r.weighted_f1);
    }
    return method + "\t" + format_mean_std(mean_std(acc)) + "\t" +
           format_mean_std(mean_std(macro)) + "\t" + format_mean_std(mean_std(weighted)) + "\n";
}

struct LoadedCorpus {
    Taxonomy taxonomy;
    std::vector<LabeledSample> pool;
};

inline LoadedCorpus load_corpus(const RunSpec& spec) {
    LoadedCorpus corpus;
    corpus.taxonomy = Taxonomy::load(spec.taxonomy_path);
    corpus.pool = load_dataset(spec.dataset, corpus.taxonomy);
    if (corpus.pool.empty()) throw EmptyDataset();
    return corpus;
}

// Per-seed data derivation shared by every command, so the baseline inside a
// PGKD run is the same model train-base would produce for that seed.
struct SeedData {
    DatasetSplit split;
    std::vector<LabeledSample> reserve;  // pool minus the seed set
    StudentConfig student;
    PGKDConfig pgkd;
};

inline SeedData derive_seed_data(const LoadedCorpus& corpus, const RunSpec& spec,
                                 std::uint64_t seed, int seed_size) {
    SeedData data;
    std::vector<LabeledSample> seed_set =
        sample_seed_set(corpus.pool, static_cast<std::size_t>(seed_size),
                        mix_seed(seed, kSampleStream));
    data.split = split(seed_set, spec.train_fraction, mix_seed(seed, kSplitStream));

    std::unordered_set<long> taken;
    taken.reserve(seed_set.size());
    for (const auto& s : seed_set) taken.insert(s.id);
    for (const auto& s : corpus.pool) {
        if (!taken.count(s.id)) data.reserve.push_back(s);
    }

    data.student = spec.student;
    data.student.seed = mix_seed(seed, kStudentStream);
    data.pgkd = spec.pgkd;
    data.pgkd.seed = mix_seed(seed, kPgkdStream);
    return data;
}

inline std::unique_ptr<TeacherBackend> make_backend(const RunSpec& spec,
                                                    const LoadedCorpus& corpus,
                                                    const SeedData& data, std::uint64_t seed) {
    if (spec.teacher_kind == "mock") {
        return std::make_unique<MockOracleBackend>(corpus.taxonomy, data.reserve,
                                                   spec.mock_quality, mix_seed(seed, kMockStream));
    }
    if (spec.teacher_kind == "http") {
        return std::make_unique<HttpChatBackend>(spec.http);
    }
    throw UsageError("unknown teacher kind: " + spec.teacher_kind);
}

// Runs fn(i) for each seed index, on up to `workers` threads. The first
// exception wins and is rethrown after all threads join.
template <typename Fn>
inline void for_each_seed(std::size_t count, int workers, Fn&& fn) {
    const std::size_t n_threads =
        std::min<std::size_t>(std::max(1, workers), count == 0 ? 1 : count);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        threads.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::string pgkd_method_label(const PGKDConfig& config) {
    std::string label = "pgkd";
    if (!config.use_validation_report) label += "-wo-validation";
    if (!config.use_hard_negatives) label += "-wo-hard-negatives";
    return label;
}

}  // namespace detail

// Trains and evaluates model^0 per seed; writes per-seed checkpoint and
// report plus an aggregate mean ± stddev summary.
inline void cmd_train_base(const RunSpec& spec) {
    if (spec.seeds.empty()) throw UsageError("at least one seed is required");
    const detail::LoadedCorpus corpus = detail::load_corpus(spec);
    const std::string header = detail::header_line(spec);

    std::vector<ClassificationReport> reports(spec.seeds.size());
    detail::for_each_seed(spec.seeds.size(), spec.workers, [&](std::size_t i) {
        const std::uint64_t seed = spec.seeds[i];
        const detail::SeedData data =
            detail::derive_seed_data(corpus, spec, seed, spec.seed_size);
        TrainResult result =
            train(corpus.taxonomy, spec.featurizer, data.split.train, data.split.val, data.student);
        const Evaluation eval = evaluate(result.model, data.split.val);
        reports[i] = eval.report;

        const auto dir = spec.out_dir / ("seed_" + std::to_string(seed));
        result.model.save(dir / "base_checkpoint.json");
        char loss_line[64];
        std::snprintf(loss_line, sizeof(loss_line), "val_loss  %.6f\n", eval.loss);
        detail::write_file(dir / "base_report.txt",
                           header + render_report(eval.report, corpus.taxonomy) + loss_line);
    });

    std::string summary = header;
    summary += "method\taccuracy\tmacro_f1\tweighted_f1\n";
    summary += detail::aggregate_row("base", reports);
    detail::write_file(spec.out_dir / "train_base_summary.tsv", summary);
}

// Runs the full distillation loop per seed and emits the base-vs-PGKD
// aggregate comparison. Ablation flags flow through the prompt context and
// show up in the method label.
inline void cmd_pgkd(const RunSpec& spec) {
    if (spec.seeds.empty()) throw UsageError("at least one seed is required");
    const detail::LoadedCorpus corpus = detail::load_corpus(spec);
    const std::string header = detail::header_line(spec);

    std::vector<ClassificationReport> base_reports(spec.seeds.size());
    std::vector<ClassificationReport> pgkd_reports(spec.seeds.size());
    detail::for_each_seed(spec.seeds.size(), spec.workers, [&](std::size_t i) {
        const std::uint64_t seed = spec.seeds[i];
        const detail::SeedData data =
            detail::derive_seed_data(corpus, spec, seed, spec.seed_size);
        auto backend = detail::make_backend(spec, corpus, data, seed);
        PGKDResult result = run_pgkd(corpus.taxonomy, spec.featurizer, data.split, data.student,
                                     *backend, data.pgkd);
        base_reports[i] = result.manifest.steps.front().report;
        pgkd_reports[i] = result.manifest.final_report;

        const auto dir = spec.out_dir / ("seed_" + std::to_string(seed));
        detail::write_file(dir / "manifest.json", manifest_to_string(result.manifest));
        detail::write_file(dir / "metrics.tsv", header + metrics_table(result.manifest));
        result.model.save(dir / "best_checkpoint.json");
        detail::write_file(dir / "val_report.txt",
                           header + render_report(result.manifest.final_report, corpus.taxonomy));
    });

    std::string summary = header;
    summary += "method\taccuracy\tmacro_f1\tweighted_f1\n";
    summary += detail::aggregate_row("base", base_reports);
    summary += detail::aggregate_row(detail::pgkd_method_label(spec.pgkd), pgkd_reports);
    detail::write_file(spec.out_dir / "pgkd_summary.tsv", summary);
}

// Base and PGKD at each seed-set size; emits the size x method grid.
inline void cmd_scaling_sweep(const RunSpec& spec, const std::vector<int>& sizes) {
    if (sizes.empty()) throw UsageError("scaling sweep requires at least one size");
    if (spec.seeds.empty()) throw UsageError("at least one seed is required");
    const detail::LoadedCorpus corpus = detail::load_corpus(spec);
    const std::string header = detail::header_line(spec);

    std::string grid = header;
    grid += "size\tmethod\taccuracy\tmacro_f1\tweighted_f1\n";
    for (int size : sizes) {
        std::vector<ClassificationReport> base_reports(spec.seeds.size());
        std::vector<ClassificationReport> pgkd_reports(spec.seeds.size());
        detail::for_each_seed(spec.seeds.size(), spec.workers, [&](std::size_t i) {
            const std::uint64_t seed = spec.seeds[i];
            const detail::SeedData data = detail::derive_seed_data(corpus, spec, seed, size);
            auto backend = detail::make_backend(spec, corpus, data, seed);
            PGKDResult result = run_pgkd(corpus.taxonomy, spec.featurizer, data.split,
                                         data.student, *backend, data.pgkd);
            base_reports[i] = result.manifest.steps.front().report;
            pgkd_reports[i] = result.manifest.final_report;

            const auto dir =
                spec.out_dir / ("size_" + std::to_string(size)) / ("seed_" + std::to_string(seed));
            detail::write_file(dir / "manifest.json", manifest_to_string(result.manifest));
        });
        grid += std::to_string(size) + "\t" +
                detail::aggregate_row("base", base_reports);
        grid += std::to_string(size) + "\t" +
                detail::aggregate_row(detail::pgkd_method_label(spec.pgkd), pgkd_reports);
    }
    detail::write_file(spec.out_dir / "scaling_sweep.tsv", grid);
}

// Teacher-only baseline over the dataset named in the spec (treated as the
// test set). Failures stay out of the metrics and are counted in the footer.
inline void cmd_zero_shot(const RunSpec& spec) {
    const detail::LoadedCorpus corpus = detail::load_corpus(spec);
    const std::string header = detail::header_line(spec);

    std::unique_ptr<TeacherBackend> backend;
    if (spec.teacher_kind == "mock") {
        backend = std::make_unique<ConstantBackend>(corpus.taxonomy, 0);
    } else if (spec.teacher_kind == "http") {
        backend = std::make_unique<HttpChatBackend>(spec.http);
    } else {
        throw UsageError("unknown teacher kind: " + spec.teacher_kind);
    }

    std::vector<std::string> texts;
    texts.reserve(corpus.pool.size());
    for (const auto& s : corpus.pool) texts.push_back(s.text);
    const ZeroShotResult result =
        zero_shot_classify(*backend, corpus.taxonomy, texts, spec.workers);

    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < corpus.pool.size(); ++i) {
        if (result.predictions[i] < 0) continue;
        records.push_back({corpus.pool[i].id, corpus.pool[i].label, result.predictions[i], 1.0});
    }
    const ClassificationReport report = build_report(records, corpus.taxonomy.size());

    char footer[160];
    std::snprintf(footer, sizeof(footer),
                  "failures  %d / %zu\ninput_tokens  %ld\noutput_tokens  %ld\n", result.failures,
                  corpus.pool.size(), result.usage.input_tokens, result.usage.output_tokens);
    detail::write_file(spec.out_dir / "zero_shot_report.txt",
                       header + render_report(report, corpus.taxonomy) + footer);
}

// Re-renders a stored manifest: per-step table, best-model summary, final
// report, and the cost table at the given rates.
inline void cmd_report(const std::filesystem::path& manifest_path, std::ostream& out,
                       const Pricing& pricing = {}) {
    std::ifstream in(manifest_path);
    if (!in) throw UsageError("cannot open manifest: " + manifest_path.string());
    nlohmann::ordered_json doc = nlohmann::ordered_json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw UsageError("manifest is not JSON: " + manifest_path.string());
    const RunManifest manifest = manifest_from_json(doc);
    const Taxonomy taxonomy = Taxonomy::from_names(manifest.taxonomy_names);

    out << metrics_table(manifest);
    char line[96];
    std::snprintf(line, sizeof(line), "best_step  %d\nbest_val_loss  %.6f\n", manifest.best_step,
                  manifest.best_val_loss);
    out << line;
    out << "final report (best model on validation):\n";
    out << render_report(manifest.final_report, taxonomy);
    out << render_cost_table(estimate_cost_latency(manifest, pricing));
}

}  // namespace pgkd
