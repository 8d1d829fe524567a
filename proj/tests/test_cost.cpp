#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "pgkd/cost.hpp"
#include "pgkd/loop.hpp"

using namespace pgkd;

namespace {

RunManifest manifest_with_tokens(const std::vector<std::pair<long, long>>& per_step) {
    RunManifest m;
    int step = 0;
    for (const auto& [in, out] : per_step) {
        StepRecord r;
        r.step = step++;
        r.tokens = {in, out};
        m.steps.push_back(r);
    }
    return m;
}

std::vector<std::string> table_lines(const std::string& table) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < table.size()) {
        std::size_t nl = table.find('\n', pos);
        if (nl == std::string::npos) nl = table.size();
        lines.push_back(table.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

int column_count(const std::string& line) {
    int columns = 0;
    bool in_field = false;
    for (char c : line) {
        const bool space = (c == ' ');
        if (!space && !in_field) ++columns;
        in_field = !space;
    }
    return columns;
}

}  // namespace

TEST_CASE("zero tokens cost zero") {
    const CostRecord record =
        estimate_cost_latency(manifest_with_tokens({{0, 0}, {0, 0}}), {3.0, 15.0});
    CHECK(record.teacher_cost == 0.0);
    CHECK(record.input_tokens == 0);
    CHECK(record.output_tokens == 0);
}

TEST_CASE("hand-computed dollar figure") {
    // 10k input at $3.00/1k + 2k output at $15.00/1k = $30 + $30 = $60.
    const CostRecord record =
        estimate_cost_latency(manifest_with_tokens({{4000, 500}, {6000, 1500}}), {3.0, 15.0});
    CHECK(record.input_tokens == 10000);
    CHECK(record.output_tokens == 2000);
    CHECK(record.teacher_cost == 60.0);
}

TEST_CASE("cost is linear in token counts") {
    const Pricing pricing{2.5, 7.75};
    const CostRecord once =
        estimate_cost_latency(manifest_with_tokens({{1234, 567}}), pricing);
    const CostRecord twice =
        estimate_cost_latency(manifest_with_tokens({{1234, 567}, {1234, 567}}), pricing);
    CHECK(twice.teacher_cost == 2.0 * once.teacher_cost);
}

TEST_CASE("negative rates are rejected") {
    CHECK_THROWS_AS(estimate_cost_latency(manifest_with_tokens({{1, 1}}), {-1.0, 0.0}), Error);
}

TEST_CASE("student measurements feed latency and instance cost") {
    BatchTimings timings;
    timings.batch_seconds = {20.0, 22.0, 21.0};
    timings.instance_hourly_rate = 0.768;  // dollars per hour
    const CostRecord record =
        estimate_cost_latency(manifest_with_tokens({{100, 10}}), {1.0, 1.0}, timings);
    REQUIRE(record.student_latency_s.has_value());
    CHECK(*record.student_latency_s == Catch::Approx(21.0));
    REQUIRE(record.student_cost.has_value());
    CHECK(*record.student_cost == Catch::Approx(21.0 / 3600.0 * 0.768));
}

TEST_CASE("the rendered table has four columns and one row per method") {
    BatchTimings timings;
    timings.batch_seconds = {21.45};
    timings.instance_hourly_rate = 0.768;
    const CostRecord record =
        estimate_cost_latency(manifest_with_tokens({{10000, 2000}}), {3.0, 15.0}, timings);
    const std::string table = render_cost_table(record);

    const auto lines = table_lines(table);
    REQUIRE(lines.size() == 3);  // header + teacher + student
    CHECK(column_count(lines[0]) == 4);
    CHECK(lines[0].find("method") != std::string::npos);
    CHECK(lines[0].find("latency_s") != std::string::npos);
    CHECK(lines[0].find("cost_usd") != std::string::npos);
    CHECK(lines[0].find("tokens") != std::string::npos);
    CHECK(lines[1].find("teacher") != std::string::npos);
    CHECK(lines[1].find("60.0000") != std::string::npos);
    CHECK(lines[1].find("12000") != std::string::npos);
    CHECK(lines[2].find("student-batch64") != std::string::npos);
    CHECK(lines[2].find("21.450") != std::string::npos);
}
