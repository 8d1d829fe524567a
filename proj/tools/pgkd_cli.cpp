#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgkd/pgkd.hpp"

namespace {

struct CliOverrides {
    std::optional<std::string> dataset;
    std::optional<std::string> taxonomy;
    std::optional<std::string> config;
    std::optional<std::string> out;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<int> seed_size;
    std::optional<std::string> teacher;
    std::optional<int> workers;
    bool no_validation = false;
    bool no_hard_negatives = false;
};

void add_common_flags(CLI::App* cmd, CliOverrides& o) {
    cmd->add_option("--dataset", o.dataset, "line-delimited dataset (text/label records)");
    cmd->add_option("--taxonomy", o.taxonomy, "class list file, one name per line");
    cmd->add_option("--config", o.config, "JSON config file (flags override file values)");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seeds", o.seeds, "run seeds")->delimiter(',');
    cmd->add_option("--seed-size", o.seed_size, "annotated seed-set size per run");
    cmd->add_option("--teacher", o.teacher, "teacher backend")
        ->check(CLI::IsMember({"mock", "http"}));
    cmd->add_option("--workers", o.workers, "parallel seed workers");
    cmd->add_flag("--no-validation", o.no_validation, "omit the validation report block");
    cmd->add_flag("--no-hard-negatives", o.no_hard_negatives, "omit the hard-negative block");
}

// Precedence: flags > config file > defaults.
pgkd::RunSpec resolve_spec(const CliOverrides& o) {
    pgkd::RunSpec spec;
    if (o.config) pgkd::apply_config_file(spec, *o.config);
    if (o.dataset) spec.dataset = *o.dataset;
    if (o.taxonomy) spec.taxonomy_path = *o.taxonomy;
    if (o.out) spec.out_dir = *o.out;
    if (o.seeds) spec.seeds = *o.seeds;
    if (o.seed_size) spec.seed_size = *o.seed_size;
    if (o.teacher) spec.teacher_kind = *o.teacher;
    if (o.workers) spec.workers = *o.workers;
    if (o.no_validation) spec.pgkd.use_validation_report = false;
    if (o.no_hard_negatives) spec.pgkd.use_hard_negatives = false;
    if (spec.dataset.empty()) throw pgkd::UsageError("--dataset is required");
    if (spec.taxonomy_path.empty()) throw pgkd::UsageError("--taxonomy is required");
    if (spec.out_dir.empty()) throw pgkd::UsageError("--out is required");
    return spec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Performance-guided knowledge distillation for text classifiers"};
    app.require_subcommand(1);

    CliOverrides train_o;
    CLI::App* train_cmd = app.add_subcommand("train-base", "train and evaluate model^0 per seed");
    add_common_flags(train_cmd, train_o);

    CliOverrides pgkd_o;
    CLI::App* pgkd_cmd = app.add_subcommand("pgkd", "run the distillation loop per seed");
    add_common_flags(pgkd_cmd, pgkd_o);

    CliOverrides sweep_o;
    std::vector<int> sweep_sizes;
    CLI::App* sweep_cmd =
        app.add_subcommand("scaling-sweep", "repeat base + pgkd across seed-set sizes");
    add_common_flags(sweep_cmd, sweep_o);
    sweep_cmd->add_option("--sizes", sweep_sizes, "seed-set sizes")->delimiter(',');

    CliOverrides zs_o;
    CLI::App* zs_cmd = app.add_subcommand("zero-shot", "teacher-only baseline over a test set");
    add_common_flags(zs_cmd, zs_o);

    std::string manifest_path;
    double rate_in = 0.0;
    double rate_out = 0.0;
    CLI::App* report_cmd = app.add_subcommand("report", "re-render a stored run manifest");
    report_cmd->add_option("manifest", manifest_path, "path to manifest.json")->required();
    report_cmd->add_option("--rate-in", rate_in, "dollars per 1k input tokens");
    report_cmd->add_option("--rate-out", rate_out, "dollars per 1k output tokens");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            pgkd::cmd_train_base(resolve_spec(train_o));
        } else if (pgkd_cmd->parsed()) {
            pgkd::cmd_pgkd(resolve_spec(pgkd_o));
        } else if (sweep_cmd->parsed()) {
            pgkd::cmd_scaling_sweep(resolve_spec(sweep_o), sweep_sizes);
        } else if (zs_cmd->parsed()) {
            pgkd::cmd_zero_shot(resolve_spec(zs_o));
        } else if (report_cmd->parsed()) {
            pgkd::cmd_report(manifest_path, std::cout, {rate_in, rate_out});
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
