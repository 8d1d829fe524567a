#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <unordered_set>
#include <vector>

#include "pgkd/loop.hpp"
#include "pgkd/mock_teacher.hpp"
#include "support/backends.hpp"
#include "support/synthetic.hpp"

using namespace pgkd;

namespace {

// Small six-class world shared by the loop tests.
struct LoopFixture {
    Taxonomy taxonomy;
    DatasetSplit split_data;
    std::vector<LabeledSample> reserve;
    FeaturizerConfig featurizer;
    StudentConfig student;
    PGKDConfig pgkd;
};

LoopFixture make_fixture(std::uint64_t seed = 1) {
    testing::SyntheticSpec spec;
    spec.num_classes = 6;
    spec.samples_per_class = 120;
    spec.seed = 11;
    const auto pool = testing::synthetic_corpus(spec);

    LoopFixture f;
    f.taxonomy = testing::synthetic_taxonomy(spec.num_classes);
    const auto seed_set = sample_seed_set(pool, 120, mix_seed(seed, 1));
    f.split_data = split(seed_set, 0.8, mix_seed(seed, 2));

    std::unordered_set<long> taken;
    for (const auto& s : seed_set) taken.insert(s.id);
    for (const auto& s : pool) {
        if (!taken.count(s.id)) f.reserve.push_back(s);
    }

    f.featurizer.ngram_orders = {1};
    f.featurizer.dimension = 1u << 12;
    f.student.epochs = 8;
    f.student.learning_rate = 0.5;
    f.student.batch_size = 32;
    f.student.seed = mix_seed(seed, 3);
    f.pgkd.num_kd_steps = 3;
    f.pgkd.gen_batch_size = 32;
    f.pgkd.seed = mix_seed(seed, 4);
    f.pgkd.retries = 0;
    return f;
}

void check_no_validation_leak(const RunManifest& manifest,
                              const std::vector<LabeledSample>& val) {
    for (const auto& step : manifest.steps) {
        if (step.prompt.empty()) continue;
        for (const auto& v : val) {
            INFO("step " << step.step);
            CHECK(step.prompt.find(v.text) == std::string::npos);
        }
    }
}

}  // namespace

TEST_CASE("history grows by the full batch each step and the best loss is the minimum") {
    LoopFixture f = make_fixture();
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);

    const long seed_train = static_cast<long>(f.split_data.train.size());
    REQUIRE(result.manifest.steps.size() == 4);  // baseline + 3 steps
    CHECK(result.manifest.steps[0].history_size == seed_train);
    CHECK(result.manifest.steps[1].history_size == seed_train + 32);
    CHECK(result.manifest.steps[2].history_size == seed_train + 64);
    CHECK(result.manifest.steps[3].history_size == seed_train + 96);

    // Recompute the minimum over the manifest's loss column.
    double min_loss = result.manifest.steps[0].val_loss;
    for (const auto& s : result.manifest.steps) min_loss = std::min(min_loss, s.val_loss);
    CHECK(result.manifest.best_val_loss == min_loss);
    CHECK(result.manifest.steps[static_cast<std::size_t>(result.manifest.best_step)].val_loss ==
          min_loss);

    // The returned model really attains that loss on the validation set.
    const Evaluation eval = evaluate(result.model, f.split_data.val);
    CHECK(eval.loss == min_loss);

    const ManifestCheck check =
        verify_manifest(result.manifest, f.pgkd.num_kd_steps, f.pgkd.patience_limit);
    INFO(check.detail);
    CHECK(check.ok);
}

TEST_CASE("zero kd steps returns the baseline model and a baseline-only manifest") {
    LoopFixture f = make_fixture();
    f.pgkd.num_kd_steps = 0;
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);
    REQUIRE(result.manifest.steps.size() == 1);
    CHECK(result.manifest.best_step == 0);

    const TrainResult base =
        train(f.taxonomy, f.featurizer, f.split_data.train, f.split_data.val, f.student);
    CHECK(result.model.weights() == base.model.weights());
}

TEST_CASE("a poisoning teacher with zero patience stops at the first regression") {
    LoopFixture f = make_fixture();
    f.pgkd.patience_limit = 0;
    f.pgkd.num_kd_steps = 10;
    MockOracleBackend teacher(f.taxonomy, f.reserve, 1.0, 5);  // every label flipped
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);

    REQUIRE(result.manifest.steps.size() >= 2);
    CHECK(result.manifest.steps.size() < 11);
    // Termination step regressed against the best.
    const auto& last = result.manifest.steps.back();
    CHECK(last.val_loss > result.manifest.best_val_loss);

    // With an immediately harmful teacher the baseline stays best.
    CHECK(result.manifest.best_step == 0);
    const TrainResult base =
        train(f.taxonomy, f.featurizer, f.split_data.train, f.split_data.val, f.student);
    CHECK(result.model.weights() == base.model.weights());

    const ManifestCheck check =
        verify_manifest(result.manifest, f.pgkd.num_kd_steps, f.pgkd.patience_limit);
    INFO(check.detail);
    CHECK(check.ok);
}

TEST_CASE("teacher failures never abort the run") {
    LoopFixture f = make_fixture();
    f.pgkd.num_kd_steps = 2;
    f.pgkd.retries = 1;
    testing::FailingBackend teacher;
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);

    REQUIRE(result.manifest.steps.size() == 3);
    for (std::size_t i = 1; i < result.manifest.steps.size(); ++i) {
        const auto& step = result.manifest.steps[i];
        CHECK(step.accepted == 0);
        CHECK(step.generated == 0);
        REQUIRE(step.generation_failure.has_value());
        CHECK(step.generation_failure->find("transport failure") != std::string::npos);
        CHECK(step.history_size == static_cast<long>(f.split_data.train.size()));
        // Each failed step still re-evaluated: a loss and report are recorded.
        CHECK(step.val_loss > 0.0);
    }
    // retries=1 means two attempts per step.
    CHECK(teacher.prompts.size() == 4);
}

TEST_CASE("two identical runs produce byte-identical manifests") {
    LoopFixture f = make_fixture(77);
    MockOracleBackend teacher_a(f.taxonomy, f.reserve, 0.2, 9);
    MockOracleBackend teacher_b(f.taxonomy, f.reserve, 0.2, 9);
    const PGKDResult a = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher_a,
                                  f.pgkd);
    const PGKDResult b = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher_b,
                                  f.pgkd);
    CHECK(manifest_to_string(a.manifest) == manifest_to_string(b.manifest));
    CHECK(a.model.weights() == b.model.weights());
}

TEST_CASE("no validation text ever appears in a traced prompt") {
    LoopFixture f = make_fixture(3);
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);
    check_no_validation_leak(result.manifest, f.split_data.val);
}

TEST_CASE("the first prompt embeds the baseline validation report") {
    LoopFixture f = make_fixture();
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);
    const std::string baseline_report =
        render_report(result.manifest.steps[0].report, f.taxonomy);
    CHECK(result.manifest.steps[1].prompt.find(baseline_report) != std::string::npos);
    // And step 2 embeds step 1's report.
    const std::string step1_report = render_report(result.manifest.steps[1].report, f.taxonomy);
    CHECK(result.manifest.steps[2].prompt.find(step1_report) != std::string::npos);
}

TEST_CASE("ablation flags remove their blocks from every prompt") {
    LoopFixture f = make_fixture();

    SECTION("without the validation report") {
        f.pgkd.use_validation_report = false;
        MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
        const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student,
                                           teacher, f.pgkd);
        for (const auto& step : result.manifest.steps) {
            CHECK(step.prompt.find("classification report over validation set") ==
                  std::string::npos);
            if (!step.prompt.empty()) {
                CHECK(step.prompt.find("The model has a high confidence") != std::string::npos);
            }
        }
    }
    SECTION("without hard negatives") {
        f.pgkd.use_hard_negatives = false;
        MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
        const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student,
                                           teacher, f.pgkd);
        for (const auto& step : result.manifest.steps) {
            CHECK(step.prompt.find("The model has a high confidence") == std::string::npos);
            if (!step.prompt.empty()) {
                CHECK(step.prompt.find("classification report over validation set") !=
                      std::string::npos);
            }
        }
    }
}

TEST_CASE("history is append-only and generated samples carry their step") {
    LoopFixture f = make_fixture();
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);

    REQUIRE(result.history.size() ==
            static_cast<std::size_t>(result.manifest.steps.back().history_size));
    // The seed prefix is untouched.
    for (std::size_t i = 0; i < f.split_data.train.size(); ++i) {
        CHECK(result.history[i].id == f.split_data.train[i].id);
        CHECK(result.history[i].text == f.split_data.train[i].text);
        CHECK(result.history[i].origin == Origin::seed());
    }
    // Generated samples come after, tagged by non-decreasing step >= 1.
    int last_step = 1;
    std::unordered_set<long> ids;
    for (const auto& s : result.history) ids.insert(s.id);
    CHECK(ids.size() == result.history.size());
    for (std::size_t i = f.split_data.train.size(); i < result.history.size(); ++i) {
        const auto& s = result.history[i];
        CHECK(s.origin.kind == OriginKind::Generated);
        CHECK(s.origin.kd_step >= last_step);
        last_step = s.origin.kd_step;
    }
    CHECK(last_step == 3);
}

TEST_CASE("an optional test set is evaluated with the best model") {
    LoopFixture f = make_fixture();
    f.pgkd.num_kd_steps = 1;
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    std::vector<LabeledSample> test_set(f.reserve.begin(), f.reserve.begin() + 30);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd, &test_set);
    REQUIRE(result.manifest.test_report.has_value());
    CHECK(result.manifest.test_report->total == 30);
}

TEST_CASE("manifests round-trip through json") {
    LoopFixture f = make_fixture();
    f.pgkd.num_kd_steps = 2;
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.3, 5);
    const PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                       f.pgkd);

    const std::string serialized = manifest_to_string(result.manifest);
    const RunManifest reloaded =
        manifest_from_json(nlohmann::ordered_json::parse(serialized));
    CHECK(manifest_to_string(reloaded) == serialized);

    CHECK_THROWS_AS(manifest_from_json(nlohmann::ordered_json{{"format", "nope"}}), Error);
}

TEST_CASE("verify_manifest rejects tampered records") {
    LoopFixture f = make_fixture();
    MockOracleBackend teacher(f.taxonomy, f.reserve, 0.0, 5);
    PGKDResult result = run_pgkd(f.taxonomy, f.featurizer, f.split_data, f.student, teacher,
                                 f.pgkd);

    RunManifest tampered = result.manifest;
    tampered.best_val_loss += 0.25;
    CHECK_FALSE(verify_manifest(tampered, f.pgkd.num_kd_steps, f.pgkd.patience_limit).ok);

    tampered = result.manifest;
    tampered.steps[2].history_size += 1;
    CHECK_FALSE(verify_manifest(tampered, f.pgkd.num_kd_steps, f.pgkd.patience_limit).ok);

    tampered = result.manifest;
    tampered.steps.pop_back();
    CHECK_FALSE(verify_manifest(tampered, f.pgkd.num_kd_steps, f.pgkd.patience_limit).ok);
}

TEST_CASE("loop config validation") {
    PGKDConfig bad;
    bad.gen_batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {};
    bad.num_kd_steps = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {};
    bad.few_shot_k = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}
