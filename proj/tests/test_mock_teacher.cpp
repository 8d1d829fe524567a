#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "pgkd/mock_teacher.hpp"
#include "pgkd/teacher.hpp"

using namespace pgkd;

namespace {

Taxonomy ag() { return Taxonomy::from_names({"World", "Sports", "Business", "Sci/Tech"}); }

std::vector<LabeledSample> reserve_pool(const Taxonomy& tax, int per_class) {
    std::vector<LabeledSample> reserve;
    long id = 0;
    for (int c = 0; c < tax.size(); ++c) {
        for (int n = 0; n < per_class; ++n) {
            reserve.push_back({id, "reserve class " + std::to_string(c) + " item " +
                                       std::to_string(n) + " rsv" + std::to_string(id),
                               c, Origin::seed()});
            ++id;
        }
    }
    return reserve;
}

// Report text with chosen per-class F1 values.
std::string report_with_f1(const Taxonomy& tax, const std::vector<double>& f1) {
    ClassificationReport report;
    for (double v : f1) report.per_class.push_back({v, v, v, 10});
    report.accuracy = 0.5;
    report.macro_f1 = 0.5;
    report.weighted_f1 = 0.5;
    report.total = 40;
    return render_report(report, tax);
}

PromptContext base_context(const Taxonomy& tax) {
    PromptContext ctx;
    ctx.taxonomy = tax;
    ctx.few_shot = {{9000, "few shot fixture body", 0, Origin::seed()}};
    ctx.gen_batch_size = 32;
    return ctx;
}

std::unordered_map<std::string, int> text_to_class(const std::vector<LabeledSample>& reserve) {
    std::unordered_map<std::string, int> map;
    for (const auto& s : reserve) map.emplace(s.text, s.label);
    return map;
}

}  // namespace

TEST_CASE("a failing class absorbs the whole batch") {
    const Taxonomy tax = ag();
    const auto reserve = reserve_pool(tax, 40);
    MockOracleBackend backend(tax, reserve, 0.0, 7);

    PromptContext ctx = base_context(tax);
    ctx.report_text = report_with_f1(tax, {1.0, 1.0, 0.0, 1.0});  // Business failing
    const CompletionResult result = backend.complete(build_pgkd_prompt(ctx));
    REQUIRE(result.ok);

    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    REQUIRE(batch.accepted.size() == 32);
    for (const auto& s : batch.accepted) CHECK(s.label == 2);
}

TEST_CASE("no report block means uniform allocation") {
    const Taxonomy tax = ag();
    MockOracleBackend backend(tax, reserve_pool(tax, 40), 0.0, 7);

    PromptContext ctx = base_context(tax);  // no report_text
    const CompletionResult result = backend.complete(build_pgkd_prompt(ctx));
    REQUIRE(result.ok);

    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    REQUIRE(batch.accepted.size() == 32);
    std::map<int, int> counts;
    for (const auto& s : batch.accepted) ++counts[s.label];
    for (int c = 0; c < tax.size(); ++c) CHECK(counts[c] == 8);
}

TEST_CASE("allocation follows renormalized one-minus-f1 weights") {
    const Taxonomy tax = ag();
    MockOracleBackend backend(tax, reserve_pool(tax, 40), 0.0, 7);

    PromptContext ctx = base_context(tax);
    // Weights (0, 0.5, 1.0, 0.5) -> 32 * (0, 1/4, 1/2, 1/4) = (0, 8, 16, 8).
    ctx.report_text = report_with_f1(tax, {1.0, 0.5, 0.0, 0.5});
    const CompletionResult result = backend.complete(build_pgkd_prompt(ctx));
    REQUIRE(result.ok);
    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    std::map<int, int> counts;
    for (const auto& s : batch.accepted) ++counts[s.label];
    CHECK(counts[0] == 0);
    CHECK(counts[1] == 8);
    CHECK(counts[2] == 16);
    CHECK(counts[3] == 8);
}

TEST_CASE("all-perfect report falls back to uniform") {
    const Taxonomy tax = ag();
    MockOracleBackend backend(tax, reserve_pool(tax, 40), 0.0, 7);
    PromptContext ctx = base_context(tax);
    ctx.report_text = report_with_f1(tax, {1.0, 1.0, 1.0, 1.0});
    const CompletionResult result = backend.complete(build_pgkd_prompt(ctx));
    REQUIRE(result.ok);
    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    std::map<int, int> counts;
    for (const auto& s : batch.accepted) ++counts[s.label];
    for (int c = 0; c < tax.size(); ++c) CHECK(counts[c] == 8);
}

TEST_CASE("identical construction and prompt give byte-identical responses") {
    const Taxonomy tax = ag();
    const auto reserve = reserve_pool(tax, 40);
    const std::string prompt = build_pgkd_prompt(base_context(tax));

    MockOracleBackend a(tax, reserve, 0.3, 123);
    MockOracleBackend b(tax, reserve, 0.3, 123);
    const CompletionResult ra = a.complete(prompt);
    const CompletionResult rb = b.complete(prompt);
    REQUIRE(ra.ok);
    REQUIRE(rb.ok);
    CHECK(ra.text == rb.text);

    // Without replacement: a second call on the same instance draws new texts.
    const CompletionResult ra2 = a.complete(prompt);
    REQUIRE(ra2.ok);
    CHECK(ra2.text != ra.text);
}

TEST_CASE("quality one flips every label") {
    const Taxonomy tax = ag();
    const auto reserve = reserve_pool(tax, 40);
    const auto truth = text_to_class(reserve);
    MockOracleBackend backend(tax, reserve, 1.0, 99);

    const CompletionResult result = backend.complete(build_pgkd_prompt(base_context(tax)));
    REQUIRE(result.ok);
    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    REQUIRE(batch.accepted.size() == 32);
    for (const auto& s : batch.accepted) {
        CHECK(s.label != truth.at(s.text));
    }
}

TEST_CASE("quality zero flips nothing") {
    const Taxonomy tax = ag();
    const auto reserve = reserve_pool(tax, 40);
    const auto truth = text_to_class(reserve);
    MockOracleBackend backend(tax, reserve, 0.0, 99);
    const CompletionResult result = backend.complete(build_pgkd_prompt(base_context(tax)));
    const GenerationBatch batch = parse_generation(result.text, tax, 1, {});
    for (const auto& s : batch.accepted) CHECK(s.label == truth.at(s.text));
}

TEST_CASE("an emptied class reserve is a typed failure") {
    const Taxonomy tax = ag();
    MockOracleBackend backend(tax, reserve_pool(tax, 2), 0.0, 7);
    PromptContext ctx = base_context(tax);
    ctx.report_text = report_with_f1(tax, {1.0, 1.0, 0.0, 1.0});  // 32 wanted from one class of 2
    const CompletionResult result = backend.complete(build_pgkd_prompt(ctx));
    CHECK_FALSE(result.ok);
    CHECK(result.error.find("PoolExhausted") != std::string::npos);
}

TEST_CASE("constructing a mock without coverage of every class fails") {
    const Taxonomy tax = ag();
    std::vector<LabeledSample> missing = {{0, "only world text", 0, Origin::seed()}};
    CHECK_THROWS_AS(MockOracleBackend(tax, missing, 0.0, 1), PoolExhausted);
}

TEST_CASE("token accounting is non-negative and additive") {
    const Taxonomy tax = ag();
    MockOracleBackend backend(tax, reserve_pool(tax, 40), 0.0, 7);
    const std::string prompt = build_pgkd_prompt(base_context(tax));

    TokenUsage total;
    for (int i = 0; i < 3; ++i) {
        const CompletionResult r = backend.complete(prompt);
        REQUIRE(r.ok);
        CHECK(r.usage.input_tokens == approx_token_count(prompt));
        CHECK(r.usage.output_tokens > 0);
        total += r.usage;
    }
    CHECK(total.input_tokens == 3 * approx_token_count(prompt));
}

TEST_CASE("constant backend answers with its fixed category") {
    const Taxonomy tax = ag();
    ConstantBackend backend(tax, 2);
    const CompletionResult r = backend.complete(build_zero_shot_prompt(tax, "probe"));
    REQUIRE(r.ok);
    CHECK(parse_zero_shot_response(r.text, tax) == 2);
}
