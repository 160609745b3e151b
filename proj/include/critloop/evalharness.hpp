#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "critloop/backend.hpp"
#include "critloop/engine.hpp"

namespace critloop::evalharness {

// Unbiased estimator: probability that at least one of k draws without
// replacement from n samples (c of them correct) is correct, computed as
// 1 - prod (n-c-i)/(n-i). Throws std::domain_error unless
// 0 <= c <= n and 1 <= k <= n.
double pass_at_k(int n, int c, int k);

// The answer the session would report if stopped after round r: the round
// before the first correct-judging critique within [1, r], else round
// min(r, last). r = 0 is always the direct answer.
std::optional<std::string> answer_at_round(const engine::SessionTrace& trace, int r);

// 16 samples for competition-style sources (AIME and kin), 4 otherwise.
// A positive request wins over the heuristic.
int samples_for(const engine::Problem& problem, int requested);

struct TokenReport {
    // Mean completion tokens of round n, over traces that reached round n.
    std::map<int, double> avg_per_round;
    // Mean total completion tokens spent through round n, over all traces;
    // traces that stopped earlier contribute their full spend.
    std::map<int, double> cumulative_per_round;
};

TokenReport token_report(const std::vector<engine::SessionTrace>& traces);

struct BenchmarkSpec {
    std::vector<engine::Problem> problems;
    engine::EngineConfig engine;
    int samples = 0;  // 0 = per-problem heuristic
    std::uint64_t seed = 0;
    double rel_tol = 1e-6;
};

struct BenchmarkReport {
    double pass_at_1 = 0.0;
    // Accuracy if every session were stopped after round r, r = 0..N.
    // Failed samples count as incorrect.
    std::map<int, double> per_round_accuracy;
    TokenReport tokens;
    double early_stop_rate = 0.0;
    double unverifiable_rate = 0.0;
    std::size_t total_samples = 0;
    std::size_t failed_samples = 0;
    std::uint64_t seed = 0;
    int max_rounds = 0;
    std::vector<engine::SessionTrace> traces;
};

// Runs every (problem, sample) session and aggregates. Sessions run
// concurrently up to max_in_flight; failures are counted, scored as
// incorrect, and excluded from token statistics.
BenchmarkReport run_benchmark(const BenchmarkSpec& spec, backend::Backend& backend,
                              const textproto::TemplateStore& templates, int max_in_flight = 1);

// Same aggregation over traces loaded from disk. Problems supply ground
// truth; traces without a matching problem are counted as failed.
BenchmarkReport score_traces(const std::vector<engine::SessionTrace>& traces,
                             const std::vector<engine::Problem>& problems, double rel_tol = 1e-6);

double informativeness_rate(const std::vector<engine::ProbeResult>& probes);
double format_rate(const std::vector<engine::ProbeResult>& probes);

std::string render_table(const BenchmarkReport& report);
std::string render_csv(const BenchmarkReport& report);

}  // namespace critloop::evalharness
