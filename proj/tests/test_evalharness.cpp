#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <bit>
#include <cmath>

#include "critloop/evalharness.hpp"
#include "critloop/io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace critloop;
using namespace critloop::evalharness;
using testsupport::completion_of;
using testsupport::fixture_path;
using testsupport::sequential_fixture;

namespace {

// Exhaustive reference for the closed-form estimator: draw every k-subset
// of n samples (the first c of them correct) and count subsets hitting at
// least one correct sample.
double enumerated_pass_at_k(int n, int c, int k) {
    const unsigned correct_mask = c == 0 ? 0u : (1u << c) - 1u;
    long long total = 0;
    long long hit = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (std::popcount(mask) != k) continue;
        ++total;
        if ((mask & correct_mask) != 0) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

const textproto::TemplateStore& templates() {
    static auto store = textproto::TemplateStore::builtin();
    return store;
}

engine::Round round_with(int index, const std::string& answer, std::int64_t tokens,
                         std::optional<textproto::Judgment> judgment = std::nullopt) {
    engine::Round r;
    r.index = index;
    r.thought = "t";
    r.summary = "s";
    if (!answer.empty()) r.answer = answer;
    r.usage.completion_tokens = tokens;
    if (judgment) {
        textproto::Critique c;
        c.judgment = *judgment;
        c.raw = "judgment carrier";
        r.critique = c;
    }
    return r;
}

engine::SessionTrace trace_with(const std::string& id, std::vector<engine::Round> rounds) {
    engine::SessionTrace t;
    t.problem_id = id;
    t.rounds = std::move(rounds);
    if (!t.rounds.empty()) t.final_answer = t.rounds.back().answer;
    t.max_rounds = static_cast<int>(t.rounds.size()) - 1;
    return t;
}

}  // namespace

TEST_CASE("closed-form pass@k matches exhaustive enumeration") {
    for (int n = 1; n <= 8; ++n)
        for (int c = 0; c <= n; ++c)
            for (int k = 1; k <= n; ++k) {
                double expected = enumerated_pass_at_k(n, c, k);
                double actual = pass_at_k(n, c, k);
                CAPTURE(n);
                CAPTURE(c);
                CAPTURE(k);
                CHECK(std::abs(actual - expected) < 1e-12);
            }
}

TEST_CASE("pass@k reference points") {
    // 9 of 16 correct at k=1 is exactly 9/16.
    CHECK(pass_at_k(16, 9, 1) == 0.5625);
    CHECK(pass_at_k(5, 2, 2) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(pass_at_k(4, 0, 2) == 0.0);
    CHECK(pass_at_k(4, 4, 1) == 1.0);
    // More draws than wrong samples guarantees a hit.
    CHECK(pass_at_k(4, 3, 2) == 1.0);
}

TEST_CASE("pass@k rejects out-of-domain arguments") {
    CHECK_THROWS_AS(pass_at_k(0, 0, 1), std::domain_error);
    CHECK_THROWS_AS(pass_at_k(4, 5, 1), std::domain_error);
    CHECK_THROWS_AS(pass_at_k(4, -1, 1), std::domain_error);
    CHECK_THROWS_AS(pass_at_k(4, 2, 0), std::domain_error);
    CHECK_THROWS_AS(pass_at_k(4, 2, 5), std::domain_error);
}

TEST_CASE("answer_at_round replays the stop rule") {
    auto t = trace_with("p", {
                                 round_with(0, "1", 10),
                                 round_with(1, "2", 10, textproto::Judgment::Incorrect),
                                 round_with(2, "3", 10, textproto::Judgment::Correct),
                             });
    CHECK(answer_at_round(t, 0) == "1");
    CHECK(answer_at_round(t, 1) == "2");
    // The round-2 critique approves round 1, so the session returns it.
    CHECK(answer_at_round(t, 2) == "2");
    CHECK(answer_at_round(t, 9) == "2");
    CHECK(answer_at_round(t, -3) == "1");

    auto no_stop = trace_with("q", {
                                       round_with(0, "1", 10),
                                       round_with(1, "2", 10, textproto::Judgment::Incorrect),
                                   });
    CHECK(answer_at_round(no_stop, 5) == "2");

    engine::SessionTrace empty;
    CHECK_FALSE(answer_at_round(empty, 1).has_value());
}

TEST_CASE("sample counts follow the source heuristic") {
    engine::Problem p;
    p.source = "aime24";
    CHECK(samples_for(p, 0) == 16);
    p.source = "AIME 2025 II";
    CHECK(samples_for(p, 0) == 16);
    p.source = "desk";
    CHECK(samples_for(p, 0) == 4);
    p.source = "";
    CHECK(samples_for(p, 0) == 4);
    p.source = "aime24";
    CHECK(samples_for(p, 7) == 7);
}

TEST_CASE("token report separates per-round and cumulative means") {
    SUBCASE("uniform depth") {
        auto t = trace_with("p", {round_with(0, "1", 100), round_with(1, "1", 40),
                                  round_with(2, "1", 20)});
        auto report = token_report({t});
        CHECK(report.avg_per_round.at(0) == 100.0);
        CHECK(report.avg_per_round.at(1) == 40.0);
        CHECK(report.avg_per_round.at(2) == 20.0);
        CHECK(report.cumulative_per_round.at(0) == 100.0);
        CHECK(report.cumulative_per_round.at(1) == 140.0);
        CHECK(report.cumulative_per_round.at(2) == 160.0);
    }
    SUBCASE("mixed depth keeps early stoppers in the cumulative mean") {
        auto a = trace_with("a", {round_with(0, "1", 100)});
        auto b = trace_with("b", {round_with(0, "1", 100), round_with(1, "1", 40)});
        auto report = token_report({a, b});
        CHECK(report.avg_per_round.at(0) == 100.0);
        // Only one trace reached round 1.
        CHECK(report.avg_per_round.at(1) == 40.0);
        CHECK(report.cumulative_per_round.at(0) == 100.0);
        // Trace a contributes its full 100-token spend at round 1 too.
        CHECK(report.cumulative_per_round.at(1) == 120.0);
    }
    SUBCASE("no traces, no rows") {
        auto report = token_report({});
        CHECK(report.avg_per_round.empty());
        CHECK(report.cumulative_per_round.empty());
    }
}

namespace {

std::string solution(const std::string& answer) {
    return "<think>reasoning</think>\nThe answer is $\\boxed{" + answer + "}$.";
}

std::string critique_block(bool correct) {
    std::string verdict = correct ? "Correct" : "Incorrect";
    return "Analysis:\n\nChecked each step.\n\nImprovement suggestions:\n\nNone.\n\n"
           "Overall judgment:\n\n" +
           verdict + "\n";
}

}  // namespace

TEST_CASE("run_benchmark aggregates sessions") {
    engine::Problem a;
    a.id = "a";
    a.question = "What is 2+2?";
    a.ground_truth = "4";
    engine::Problem b;
    b.id = "b";
    b.question = "What is 3*3?";
    b.ground_truth = "9";

    backend::ScriptedBackend be(sequential_fixture({
        completion_of(solution("4"), 100),
        completion_of(critique_block(true), 30),
        completion_of(solution("5"), 90),
        completion_of(critique_block(false) + "\n" + solution("7"), 50),
    }));

    BenchmarkSpec spec;
    spec.problems = {a, b};
    spec.engine.max_rounds = 1;
    spec.samples = 1;
    spec.seed = 11;

    auto report = run_benchmark(spec, be, templates(), 1);
    CHECK(report.total_samples == 2);
    CHECK(report.failed_samples == 0);
    CHECK(report.pass_at_1 == doctest::Approx(0.5));
    CHECK(report.per_round_accuracy.at(0) == doctest::Approx(0.5));
    CHECK(report.per_round_accuracy.at(1) == doctest::Approx(0.5));
    CHECK(report.early_stop_rate == doctest::Approx(0.5));
    CHECK(report.unverifiable_rate == 0.0);
    CHECK(report.seed == 11);
    CHECK(report.max_rounds == 1);
    REQUIRE(report.traces.size() == 2);
    CHECK(report.traces[0].problem_id == "a");
    CHECK(report.traces[0].stopped_early);
    CHECK(report.traces[1].final_answer == "7");
    CHECK(report.tokens.avg_per_round.at(0) == doctest::Approx(95.0));
    CHECK(report.tokens.avg_per_round.at(1) == doctest::Approx(40.0));
    CHECK(report.tokens.cumulative_per_round.at(1) == doctest::Approx(135.0));

    SUBCASE("score_traces reproduces the aggregation from stored traces") {
        auto rescored = score_traces(report.traces, spec.problems, spec.rel_tol);
        CHECK(rescored.pass_at_1 == doctest::Approx(report.pass_at_1));
        CHECK(rescored.per_round_accuracy == report.per_round_accuracy);
        CHECK(rescored.total_samples == report.total_samples);
        CHECK(rescored.early_stop_rate == doctest::Approx(report.early_stop_rate));
        CHECK(rescored.seed == report.seed);
        CHECK(rescored.max_rounds == report.max_rounds);
    }
}

TEST_CASE("a failed session is scored as incorrect without sinking the run") {
    engine::Problem a;
    a.id = "a";
    a.question = "What is 2+2?";
    a.ground_truth = "4";
    engine::Problem b;
    b.id = "b";
    b.question = "What is 3*3?";
    b.ground_truth = "9";

    // Only problem a has fixture entries; b dies on round 0.
    backend::ScriptedBackend be(sequential_fixture({
        completion_of(solution("4"), 100),
        completion_of(critique_block(true), 30),
    }));

    BenchmarkSpec spec;
    spec.problems = {a, b};
    spec.engine.max_rounds = 1;
    spec.samples = 1;

    auto report = run_benchmark(spec, be, templates(), 1);
    CHECK(report.total_samples == 2);
    CHECK(report.failed_samples == 1);
    CHECK(report.pass_at_1 == doctest::Approx(0.5));
    CHECK(report.per_round_accuracy.at(1) == doctest::Approx(0.5));
    // Token stats cover only the surviving trace.
    CHECK(report.tokens.avg_per_round.at(0) == doctest::Approx(100.0));
    CHECK(report.traces.size() == 1);
}

TEST_CASE("score_traces counts traces without a matching problem as failed") {
    auto t = trace_with("ghost", {round_with(0, "1", 10)});
    engine::Problem a;
    a.id = "a";
    a.ground_truth = "1";
    auto report = score_traces({t}, {a});
    CHECK(report.total_samples == 1);
    CHECK(report.failed_samples == 1);
    CHECK(report.pass_at_1 == 0.0);
}

TEST_CASE("benchmark over the scripted ten-problem set hits reference numbers") {
    auto problems = io::load_problems(fixture_path("bench10_problems.jsonl"));
    REQUIRE(problems.size() == 10);
    auto fx = backend::Fixture::from_jsonl(fixture_path("bench10_fixture.jsonl"));
    REQUIRE(fx.policy == backend::Fixture::Policy::Sequential);
    backend::ScriptedBackend be(std::move(fx));

    BenchmarkSpec spec;
    spec.problems = problems;
    spec.engine.max_rounds = 1;
    spec.samples = 1;
    spec.seed = 7;

    auto report = run_benchmark(spec, be, templates(), 1);
    CHECK(report.total_samples == 10);
    CHECK(report.failed_samples == 0);
    CHECK(report.pass_at_1 == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(report.per_round_accuracy.at(0) == doctest::Approx(0.40).epsilon(1e-9));
    CHECK(report.per_round_accuracy.at(1) == doctest::Approx(0.70).epsilon(1e-9));
    CHECK(report.tokens.avg_per_round.at(0) == doctest::Approx(13500.0));
    CHECK(report.tokens.avg_per_round.at(1) == doctest::Approx(4600.0));
    CHECK(report.tokens.cumulative_per_round.at(0) == doctest::Approx(13500.0));
    CHECK(report.tokens.cumulative_per_round.at(1) == doctest::Approx(18100.0));
    CHECK(report.early_stop_rate == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("probe rates") {
    engine::ProbeResult fmt;
    fmt.followed_format = true;
    fmt.informative = true;
    engine::ProbeResult loose;
    loose.followed_format = false;
    loose.informative = true;
    engine::ProbeResult blank;

    std::vector<engine::ProbeResult> probes = {fmt, loose, blank};
    CHECK(format_rate(probes) == doctest::Approx(1.0 / 3.0));
    CHECK(informativeness_rate(probes) == doctest::Approx(2.0 / 3.0));
    CHECK(format_rate({}) == 0.0);
    CHECK(informativeness_rate({}) == 0.0);
}

TEST_CASE("report rendering") {
    auto t = trace_with("p", {round_with(0, "1", 100), round_with(1, "1", 40)});
    engine::Problem p;
    p.id = "p";
    p.ground_truth = "1";
    auto report = score_traces({t}, {p});

    auto table = render_table(report);
    CHECK(table.find("pass@1") != std::string::npos);
    CHECK(table.find("round  accuracy") != std::string::npos);
    CHECK(table.find("1.0000") != std::string::npos);
    CHECK(table.find("140.0") != std::string::npos);

    auto csv = render_csv(report);
    CHECK(csv.rfind("round,accuracy,avg_completion_tokens,cumulative_completion_tokens\n", 0) ==
          0);
    // Header plus one row per round.
    size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == 1 + report.per_round_accuracy.size());
}
