#include "critloop/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "critloop/verify.hpp"

namespace critloop::evalharness {

double pass_at_k(int n, int c, int k) {
    if (n < 1 || c < 0 || c > n || k < 1 || k > n)
        throw std::domain_error("pass_at_k needs 0 <= c <= n and 1 <= k <= n");
    if (n - c < k) return 1.0;
    double miss = 1.0;
    for (int i = 0; i < k; ++i) miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    return 1.0 - miss;
}

std::optional<std::string> answer_at_round(const engine::SessionTrace& trace, int r) {
    if (trace.rounds.empty()) return std::nullopt;
    if (r < 0) r = 0;
    int last = static_cast<int>(trace.rounds.size()) - 1;
    int limit = std::min(r, last);
    for (int t = 1; t <= limit; ++t) {
        const auto& round = trace.rounds[static_cast<size_t>(t)];
        if (round.critique && round.critique->judgment == textproto::Judgment::Correct)
            return trace.rounds[static_cast<size_t>(t - 1)].answer;
    }
    return trace.rounds[static_cast<size_t>(limit)].answer;
}

int samples_for(const engine::Problem& problem, int requested) {
    if (requested > 0) return requested;
    std::string src = problem.source;
    std::transform(src.begin(), src.end(), src.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return src.find("aime") != std::string::npos ? 16 : 4;
}

TokenReport token_report(const std::vector<engine::SessionTrace>& traces) {
    TokenReport report;
    if (traces.empty()) return report;
    size_t deepest = 0;
    for (const auto& t : traces) deepest = std::max(deepest, t.rounds.size());

    for (size_t n = 0; n < deepest; ++n) {
        double sum = 0.0;
        size_t reached = 0;
        for (const auto& t : traces) {
            if (t.rounds.size() > n) {
                sum += static_cast<double>(t.rounds[n].usage.completion_tokens);
                ++reached;
            }
        }
        if (reached > 0)
            report.avg_per_round[static_cast<int>(n)] = sum / static_cast<double>(reached);

        double cum_sum = 0.0;
        for (const auto& t : traces) {
            if (t.rounds.empty()) continue;
            size_t limit = std::min(n, t.rounds.size() - 1);
            for (size_t i = 0; i <= limit; ++i)
                cum_sum += static_cast<double>(t.rounds[i].usage.completion_tokens);
        }
        report.cumulative_per_round[static_cast<int>(n)] =
            cum_sum / static_cast<double>(traces.size());
    }
    return report;
}

namespace {

struct Sample {
    const engine::Problem* problem = nullptr;
    std::optional<engine::SessionTrace> trace;
};

BenchmarkReport aggregate(const std::vector<Sample>& samples, double rel_tol, int max_rounds,
                          std::uint64_t seed) {
    BenchmarkReport report;
    report.seed = seed;
    report.max_rounds = max_rounds;
    report.total_samples = samples.size();

    std::map<std::string, std::pair<int, int>> per_problem;  // id -> {n, c}
    size_t succeeded = 0, early = 0, unverifiable = 0;

    for (const auto& s : samples) {
        if (!s.trace) {
            ++report.failed_samples;
            if (s.problem) per_problem[s.problem->id].first += 1;
            continue;
        }
        if (!s.problem) {
            ++report.failed_samples;
            continue;
        }
        ++succeeded;
        auto& [n, c] = per_problem[s.problem->id];
        ++n;
        auto verdict =
            verify::score_answer(s.trace->final_answer, s.problem->ground_truth, rel_tol);
        if (verdict == verify::Verdict::CorrectAnswer) ++c;
        if (verdict == verify::Verdict::Unverifiable) ++unverifiable;
        if (s.trace->stopped_early) ++early;
        report.traces.push_back(*s.trace);
    }

    if (!per_problem.empty()) {
        double acc = 0.0;
        for (const auto& [id, nc] : per_problem)
            if (nc.first > 0)
                acc += static_cast<double>(nc.second) / static_cast<double>(nc.first);
        report.pass_at_1 = acc / static_cast<double>(per_problem.size());
    }

    for (int r = 0; r <= max_rounds; ++r) {
        size_t correct = 0;
        for (const auto& s : samples) {
            if (!s.trace || !s.problem) continue;
            auto answer = answer_at_round(*s.trace, r);
            if (verify::score_answer(answer, s.problem->ground_truth, rel_tol) ==
                verify::Verdict::CorrectAnswer)
                ++correct;
        }
        report.per_round_accuracy[r] =
            samples.empty() ? 0.0
                            : static_cast<double>(correct) / static_cast<double>(samples.size());
    }

    report.tokens = token_report(report.traces);
    if (succeeded > 0) {
        report.early_stop_rate = static_cast<double>(early) / static_cast<double>(succeeded);
        report.unverifiable_rate =
            static_cast<double>(unverifiable) / static_cast<double>(succeeded);
    }
    return report;
}

}  // namespace

BenchmarkReport run_benchmark(const BenchmarkSpec& spec, backend::Backend& backend,
                              const textproto::TemplateStore& templates, int max_in_flight) {
    struct Job {
        const engine::Problem* problem;
        int sample_index;
    };
    std::vector<Job> jobs;
    for (const auto& p : spec.problems) {
        int n = samples_for(p, spec.samples);
        for (int i = 0; i < n; ++i) jobs.push_back({&p, i});
    }

    std::vector<Sample> samples(jobs.size());
    auto run_one = [&](size_t i) {
        samples[i].problem = jobs[i].problem;
        try {
            samples[i].trace = engine::run_session(backend, templates, *jobs[i].problem,
                                                   spec.engine, spec.seed, jobs[i].sample_index);
        } catch (const engine::SessionError&) {
            // Failure recorded by the absent trace.
        }
    };

    if (max_in_flight <= 1) {
        for (size_t i = 0; i < jobs.size(); ++i) run_one(i);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                run_one(i);
            }
        };
        size_t n_workers = std::min(static_cast<size_t>(max_in_flight), jobs.size());
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    return aggregate(samples, spec.rel_tol, spec.engine.max_rounds, spec.seed);
}

BenchmarkReport score_traces(const std::vector<engine::SessionTrace>& traces,
                             const std::vector<engine::Problem>& problems, double rel_tol) {
    std::map<std::string, const engine::Problem*> by_id;
    for (const auto& p : problems) by_id[p.id] = &p;

    int max_rounds = 0;
    std::vector<Sample> samples;
    samples.reserve(traces.size());
    for (const auto& t : traces) {
        Sample s;
        auto it = by_id.find(t.problem_id);
        if (it != by_id.end()) s.problem = it->second;
        s.trace = t;
        if (!s.problem) s.trace.reset();  // no ground truth, counts as failed
        max_rounds = std::max(max_rounds, t.max_rounds);
        samples.push_back(std::move(s));
    }
    std::uint64_t seed = traces.empty() ? 0 : traces.front().seed;
    return aggregate(samples, rel_tol, max_rounds, seed);
}

double informativeness_rate(const std::vector<engine::ProbeResult>& probes) {
    if (probes.empty()) return 0.0;
    size_t n = 0;
    for (const auto& p : probes)
        if (p.informative) ++n;
    return static_cast<double>(n) / static_cast<double>(probes.size());
}

double format_rate(const std::vector<engine::ProbeResult>& probes) {
    if (probes.empty()) return 0.0;
    size_t n = 0;
    for (const auto& p : probes)
        if (p.followed_format) ++n;
    return static_cast<double>(n) / static_cast<double>(probes.size());
}

std::string render_table(const BenchmarkReport& report) {
    std::ostringstream os;
    os << std::fixed;
    os << "samples        " << report.total_samples << " (failed " << report.failed_samples
       << ")\n";
    os << std::setprecision(4);
    os << "pass@1         " << report.pass_at_1 << "\n";
    os << "early stop     " << report.early_stop_rate << "\n";
    os << "unverifiable   " << report.unverifiable_rate << "\n";
    os << "\nround  accuracy  avg_tokens  cum_tokens\n";
    for (const auto& [r, acc] : report.per_round_accuracy) {
        os << std::setw(5) << r << "  " << std::setprecision(4) << std::setw(8) << acc;
        auto avg = report.tokens.avg_per_round.find(r);
        auto cum = report.tokens.cumulative_per_round.find(r);
        os << std::setprecision(1);
        if (avg != report.tokens.avg_per_round.end())
            os << "  " << std::setw(10) << avg->second;
        else
            os << "  " << std::setw(10) << "-";
        if (cum != report.tokens.cumulative_per_round.end())
            os << "  " << std::setw(10) << cum->second;
        else
            os << "  " << std::setw(10) << "-";
        os << "\n";
    }
    return os.str();
}

std::string render_csv(const BenchmarkReport& report) {
    std::ostringstream os;
    os << std::fixed;
    os << "round,accuracy,avg_completion_tokens,cumulative_completion_tokens\n";
    for (const auto& [r, acc] : report.per_round_accuracy) {
        os << r << "," << std::setprecision(6) << acc;
        auto avg = report.tokens.avg_per_round.find(r);
        auto cum = report.tokens.cumulative_per_round.find(r);
        os << std::setprecision(2);
        os << ",";
        if (avg != report.tokens.avg_per_round.end()) os << avg->second;
        os << ",";
        if (cum != report.tokens.cumulative_per_round.end()) os << cum->second;
        os << "\n";
    }
    return os.str();
}

}  // namespace critloop::evalharness
