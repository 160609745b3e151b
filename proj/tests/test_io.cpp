#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "critloop/io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace critloop;
using namespace critloop::io;
using testsupport::TempFile;

namespace {

engine::SessionTrace sample_trace() {
    engine::SessionTrace t;
    t.problem_id = "p7";
    t.seed = 99;
    t.sample_index = 2;
    t.max_rounds = 3;
    t.stopped_early = true;
    t.returned_round = 0;
    t.final_answer = "42";

    engine::Round r0;
    r0.index = 0;
    r0.thought = "multiply\nthen add";
    r0.summary = "so $\\boxed{42}$";
    r0.answer = "42";
    r0.usage = {120, 560};
    r0.finish_reason = backend::FinishReason::Stop;
    t.rounds.push_back(r0);

    engine::Round r1;
    r1.index = 1;
    textproto::Critique c;
    c.analysis = "checks out";
    c.suggestions = "none";
    c.judgment = textproto::Judgment::Correct;
    c.raw = "Overall judgment: Correct";
    r1.critique = c;
    r1.usage = {200, 80};
    r1.flagged = false;
    t.rounds.push_back(r1);
    return t;
}

}  // namespace

TEST_CASE("problems load with optional fields") {
    TempFile f("problems");
    f.write(
        R"({"id": "a", "question": "Q1", "ground_truth": "5", "source": "aime-2024", "subject": "algebra"}
{"id": "b", "question": "Q2"}
{"id": "c", "question": "Q3", "ground_truth": "1", "annotated_thought": "think", "annotated_summary": "sum $\\boxed{1}$"}
)");
    auto ps = load_problems(f.path());
    REQUIRE(ps.size() == 3);
    CHECK(ps[0].id == "a");
    CHECK(ps[0].ground_truth == "5");
    CHECK(ps[0].source == "aime-2024");
    CHECK(ps[1].ground_truth.empty());
    CHECK_FALSE(ps[1].annotated_thought.has_value());
    CHECK(ps[2].annotated_thought == "think");
    CHECK(ps[2].annotated_summary == "sum $\\boxed{1}$");
}

TEST_CASE("problems without id or question are rejected") {
    TempFile f("bad_problems");
    f.write(R"({"question": "no id"}
)");
    CHECK_THROWS_AS(load_problems(f.path()), IoError);
    CHECK_THROWS_AS(load_problems("missing_file.jsonl"), IoError);

    TempFile g("bad_json");
    g.write("{broken\n");
    CHECK_THROWS_AS(load_problems(g.path()), IoError);
}

TEST_CASE("traces round-trip through json exactly") {
    auto t = sample_trace();
    auto j = trace_to_json(t);
    CHECK(j["schema"] == "trace/v1");
    auto back = trace_from_json(j);
    CHECK(back == t);
}

TEST_CASE("trace json represents absent fields as null") {
    engine::SessionTrace t;
    t.problem_id = "p";
    engine::Round r;
    r.index = 0;
    t.rounds.push_back(r);

    auto j = trace_to_json(t);
    CHECK(j["final_answer"].is_null());
    CHECK(j["rounds"][0]["answer"].is_null());
    CHECK(j["rounds"][0]["critique"].is_null());
    auto back = trace_from_json(j);
    CHECK(back == t);
}

TEST_CASE("trace files round-trip as jsonl") {
    auto t1 = sample_trace();
    auto t2 = sample_trace();
    t2.problem_id = "p8";
    t2.stopped_early = false;
    t2.returned_round = 1;

    TempFile f("traces");
    write_traces(f.path(), {t1, t2});
    auto back = read_traces(f.path());
    REQUIRE(back.size() == 2);
    CHECK(back[0] == t1);
    CHECK(back[1] == t2);
}

TEST_CASE("unsupported trace schema is rejected") {
    nlohmann::json j;
    j["schema"] = "trace/v0";
    j["problem_id"] = "p";
    j["rounds"] = nlohmann::json::array();
    CHECK_THROWS_AS(trace_from_json(j), IoError);
}

TEST_CASE("writing traces twice produces identical bytes") {
    auto t = sample_trace();
    TempFile a("traces_a");
    TempFile b("traces_b");
    write_traces(a.path(), {t});
    write_traces(b.path(), {t});
    CHECK(a.read() == b.read());
    CHECK_FALSE(a.read().empty());
}
