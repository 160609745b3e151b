#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "critloop/curate.hpp"
#include "critloop/io.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using testsupport::fixture_path;
using testsupport::TempFile;

namespace {

struct RunResult {
    int status = -1;
    std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
    RunResult result;
    std::string cmd = std::string(CRITLOOP_BIN) + " " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return result;
    char buf[4096];
    size_t n;
    while ((n = ::fread(buf, 1, sizeof buf, pipe)) > 0) result.output.append(buf, n);
    int rc = ::pclose(pipe);
    if (WIFEXITED(rc)) result.status = WEXITSTATUS(rc);
    return result;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string bench_flags() {
    return "--backend scripted --fixture " + fixture_path("bench10_fixture.jsonl") +
           " --problems " + fixture_path("bench10_problems.jsonl") +
           " --max-rounds 1 --samples 1 --seed 7";
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run_cli("").status == 1);
    CHECK(run_cli("infer --bogus-flag x").status == 1);
    // Missing required --traces.
    CHECK(run_cli("infer --problems " + fixture_path("bench10_problems.jsonl")).status == 1);
    CHECK(run_cli("no-such-subcommand").status == 1);
}

TEST_CASE("--help exits 0") {
    auto r = run_cli("--help");
    CHECK(r.status == 0);
    CHECK(r.output.find("curate") != std::string::npos);
    CHECK(r.output.find("infer") != std::string::npos);
}

TEST_CASE("config problems exit 1") {
    TempFile traces("cli_traces");
    SUBCASE("nonexistent config file") {
        auto r = run_cli("infer --config no_such_config.json --problems " +
                         fixture_path("bench10_problems.jsonl") + " --traces " + traces.path());
        CHECK(r.status == 1);
        CHECK(r.output.find("config error") != std::string::npos);
    }
    SUBCASE("empty problem pool") {
        TempFile empty("cli_empty_pool");
        empty.write("");
        auto r = run_cli("infer --backend scripted --fixture " +
                         fixture_path("bench10_fixture.jsonl") + " --problems " + empty.path() +
                         " --traces " + traces.path());
        CHECK(r.status == 1);
    }
    SUBCASE("scripted backend without a fixture") {
        auto r = run_cli("infer --backend scripted --problems " +
                         fixture_path("bench10_problems.jsonl") + " --traces " + traces.path());
        CHECK(r.status == 1);
    }
}

TEST_CASE("runtime failures exit 2") {
    TempFile traces("cli_traces");
    SUBCASE("fixture file does not exist") {
        auto r = run_cli("infer --backend scripted --fixture no_such_fixture.jsonl --problems " +
                         fixture_path("bench10_problems.jsonl") + " --traces " + traces.path());
        CHECK(r.status == 2);
        CHECK(r.output.find("backend error") != std::string::npos);
    }
    SUBCASE("every session fails") {
        TempFile fixture("cli_empty_fixture");
        fixture.write("");
        auto r = run_cli("infer --backend scripted --fixture " + fixture.path() + " --problems " +
                         fixture_path("bench10_problems.jsonl") + " --traces " + traces.path() +
                         " --samples 1 --max-rounds 1");
        CHECK(r.status == 2);
    }
}

TEST_CASE("infer writes one trace per session") {
    TempFile traces("cli_traces");
    auto r = run_cli("infer " + bench_flags() + " --traces " + traces.path());
    CHECK(r.status == 0);
    CHECK(r.output.find("wrote 10 traces") != std::string::npos);

    auto loaded = critloop::io::read_traces(traces.path());
    REQUIRE(loaded.size() == 10);
    CHECK(loaded[0].problem_id == "p01");
    CHECK(loaded[0].stopped_early);
    CHECK(loaded[0].final_answer == "12");
    CHECK(loaded[4].problem_id == "p05");
    CHECK_FALSE(loaded[4].stopped_early);
    CHECK(loaded[4].final_answer == "7");
    CHECK(loaded[9].final_answer == "1");
}

TEST_CASE("repeat runs produce byte-identical traces") {
    TempFile first("cli_traces_a");
    TempFile second("cli_traces_b");
    auto ra = run_cli("infer " + bench_flags() + " --traces " + first.path());
    auto rb = run_cli("infer " + bench_flags() + " --traces " + second.path());
    REQUIRE(ra.status == 0);
    REQUIRE(rb.status == 0);
    auto a = slurp(first.path());
    auto b = slurp(second.path());
    REQUIRE_FALSE(a.empty());
    CHECK(a == b);
}

TEST_CASE("eval prints the score table") {
    TempFile csv("cli_csv");
    auto r = run_cli("eval " + bench_flags() + " --csv " + csv.path());
    CHECK(r.status == 0);
    CHECK(r.output.find("pass@1         0.7000") != std::string::npos);
    CHECK(r.output.find("round  accuracy") != std::string::npos);

    auto csv_text = slurp(csv.path());
    CHECK(csv_text.rfind("round,accuracy,avg_completion_tokens,cumulative_completion_tokens\n",
                         0) == 0);
    CHECK(csv_text.find("0,0.400000,13500.00,13500.00\n") != std::string::npos);
    CHECK(csv_text.find("1,0.700000,4600.00,18100.00\n") != std::string::npos);
}

TEST_CASE("report rescoring stored traces matches the live run") {
    TempFile traces("cli_traces");
    auto ri = run_cli("infer " + bench_flags() + " --traces " + traces.path());
    REQUIRE(ri.status == 0);

    TempFile csv("cli_report_csv");
    auto r = run_cli("report --problems " + fixture_path("bench10_problems.jsonl") + " --traces " +
                     traces.path() + " --csv " + csv.path());
    CHECK(r.status == 0);
    CHECK(r.output.find("pass@1         0.7000") != std::string::npos);
    auto csv_text = slurp(csv.path());
    CHECK(csv_text.find("1,0.700000,4600.00,18100.00\n") != std::string::npos);
}

TEST_CASE("curate builds the training set end to end") {
    TempFile out("cli_train");
    auto r = run_cli("curate --backend scripted --fixture " + fixture_path("cli5_fixture.jsonl") +
                     " --problems " + fixture_path("cli5_problems.jsonl") + " --direct " +
                     fixture_path("cli5_direct.jsonl") + " --out " + out.path());
    CHECK(r.status == 0);
    CHECK(r.output.find("2 kept (correct path), 2 kept (refined path), 1 discarded, 0 failed") !=
          std::string::npos);
    CHECK(r.output.find("6 instances (2 direct, 4 critique_refine)") != std::string::npos);

    auto instances = critloop::curate::read_training_set(out.path());
    REQUIRE(instances.size() == 6);
    CHECK(instances[0].kind == "direct");
    CHECK(instances[2].kind == "critique_refine");
    for (const auto& inst : instances) {
        REQUIRE(inst.messages.size() == 2);
        CHECK(inst.target_offset == inst.messages[0].content.size());
    }

    nlohmann::json manifest = nlohmann::json::parse(slurp(out.path() + ".manifest.json"));
    CHECK(manifest["schema"] == "training/v1");
    CHECK(manifest["total"] == 6);
    CHECK(manifest["direct"] == 2);
    CHECK(manifest["critique_refine"] == 4);
    CHECK(manifest["by_source"]["algebra"] == 2);
    CHECK(manifest["by_source"]["geometry"] == 2);
    CHECK(manifest["by_source"]["annotated"] == 2);
    std::remove((out.path() + ".manifest.json").c_str());
}

TEST_CASE("probe reports the self-check verdict") {
    TempFile problems("cli_probe_problems");
    problems.write(R"({"id": "pr1", "question": "What is 5 + 5?", "ground_truth": "10"})"
                   "\n");
    TempFile fixture("cli_probe_fixture");
    fixture.write(
        R"({"fingerprint": null, "response": {"text": "<think>adding</think>\nThe sum is $\\boxed{10}$.", "completion_tokens": 40, "finish_reason": "stop"}})"
        "\n"
        R"({"fingerprint": null, "response": {"text": "Wait, checking the steps again, the addition holds.\n\nConclusion: right [END]", "completion_tokens": 25, "finish_reason": "stop"}})"
        "\n");
    TempFile out("cli_probe_out");

    auto r = run_cli("probe --backend scripted --fixture " + fixture.path() + " --problems " +
                     problems.path() + " --out " + out.path());
    CHECK(r.status == 0);
    CHECK(r.output.find("probed 1 problems") != std::string::npos);

    std::ifstream in(out.path());
    std::string line;
    REQUIRE(std::getline(in, line));
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j["problem_id"] == "pr1");
    CHECK(j["followed_format"] == true);
    CHECK(j["judgment"] == "right");
    CHECK(j["informative"] == true);
    CHECK(j["revised_answer"].is_null());
}
