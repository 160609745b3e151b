#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "critloop/backend.hpp"
#include "critloop/config.hpp"
#include "critloop/curate.hpp"
#include "critloop/engine.hpp"
#include "critloop/evalharness.hpp"
#include "critloop/io.hpp"
#include "critloop/textproto.hpp"
#include "json.hpp"

namespace {

using critloop::config::ConfigError;
using critloop::config::RunConfig;
namespace backend = critloop::backend;
namespace curate = critloop::curate;
namespace engine = critloop::engine;
namespace evalharness = critloop::evalharness;
namespace io = critloop::io;
namespace textproto = critloop::textproto;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Flags shared by every subcommand; only set fields override the config
// file.
struct CommonFlags {
    std::string config_path;
    std::string backend_kind;
    std::string fixture;
    std::string templates_dir;
    std::string model;
    std::uint64_t seed = 0;
    int max_in_flight = 0;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* mif_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    flags.seed_opt = cmd->add_option("--seed", flags.seed, "run seed");
    flags.mif_opt =
        cmd->add_option("--max-in-flight", flags.max_in_flight, "max concurrent requests");
    cmd->add_option("--backend", flags.backend_kind, "backend kind")
        ->check(CLI::IsMember({"live", "scripted"}));
    cmd->add_option("--fixture", flags.fixture, "fixture JSONL for the scripted backend");
    cmd->add_option("--templates", flags.templates_dir, "prompt template directory");
    cmd->add_option("--model", flags.model, "model identifier sent to the backend");
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) cfg = critloop::config::load_config(flags.config_path);
    if (!flags.backend_kind.empty()) cfg.backend_kind = flags.backend_kind;
    if (!flags.fixture.empty()) cfg.fixture_path = flags.fixture;
    if (!flags.templates_dir.empty()) cfg.templates_dir = flags.templates_dir;
    if (!flags.model.empty()) cfg.model_id = flags.model;
    if (flags.seed_opt && flags.seed_opt->count() > 0) cfg.seed = flags.seed;
    if (flags.mif_opt && flags.mif_opt->count() > 0) cfg.max_in_flight = flags.max_in_flight;
    critloop::config::validate(cfg);
    return cfg;
}

struct BackendHandle {
    std::unique_ptr<backend::Backend> owned;
    bool sequential_fixture = false;
};

BackendHandle make_backend(const RunConfig& cfg) {
    BackendHandle h;
    if (cfg.backend_kind == "scripted") {
        auto fixture = backend::Fixture::from_jsonl(cfg.fixture_path);
        h.sequential_fixture = fixture.policy == backend::Fixture::Policy::Sequential;
        h.owned = std::make_unique<backend::ScriptedBackend>(std::move(fixture));
        return h;
    }
    std::string base_url = cfg.base_url;
    if (base_url.empty()) {
        const char* env = std::getenv("DC_BASE_URL");
        base_url = env ? env : "";
    }
    std::string api_key = cfg.api_key;
    if (api_key.empty()) {
        const char* env = std::getenv("DC_API_KEY");
        api_key = env ? env : "";
    }
    backend::RetryPolicy retry;
    retry.seed = cfg.seed;
    h.owned = std::make_unique<backend::LiveBackend>(base_url, api_key, retry);
    return h;
}

textproto::TemplateStore make_templates(const RunConfig& cfg) {
    if (cfg.templates_dir.empty()) return textproto::TemplateStore::builtin();
    return textproto::TemplateStore::from_dir(cfg.templates_dir);
}

engine::EngineConfig make_engine_config(const RunConfig& cfg) {
    engine::EngineConfig ec;
    ec.max_rounds = cfg.max_rounds;
    ec.sampling.temperature = cfg.temperature;
    ec.sampling.top_p = cfg.top_p;
    ec.sampling.max_tokens = cfg.max_tokens;
    ec.model_id = cfg.model_id;
    return ec;
}

// Replayed fixtures answer in file order, so concurrent sessions would race
// for entries and scramble every trace. Serial execution keeps replays
// reproducible; fingerprint fixtures and live backends keep their
// parallelism.
int effective_in_flight(const RunConfig& cfg, const BackendHandle& h) {
    return h.sequential_fixture ? 1 : cfg.max_in_flight;
}

std::vector<engine::Problem> load_pool(const std::string& path) {
    auto problems = io::load_problems(path);
    if (problems.empty()) throw ConfigError("problem pool is empty: " + path);
    return problems;
}

int cmd_infer(const CommonFlags& flags, const std::string& problems_path,
              const std::string& traces_path, int max_rounds_flag, int samples_flag) {
    RunConfig cfg = resolve_config(flags);
    if (max_rounds_flag >= 0) cfg.max_rounds = max_rounds_flag;
    if (samples_flag > 0) cfg.samples = samples_flag;
    critloop::config::validate(cfg);

    auto problems = load_pool(problems_path);
    auto templates = make_templates(cfg);
    auto handle = make_backend(cfg);

    evalharness::BenchmarkSpec spec;
    spec.problems = std::move(problems);
    spec.engine = make_engine_config(cfg);
    spec.samples = cfg.samples;
    spec.seed = cfg.seed;
    spec.rel_tol = cfg.rel_tol;

    auto report = evalharness::run_benchmark(spec, *handle.owned, templates,
                                             effective_in_flight(cfg, handle));
    io::write_traces(traces_path, report.traces);
    std::cout << "wrote " << report.traces.size() << " traces to " << traces_path << " ("
              << report.failed_samples << " failed sessions)\n";
    return report.failed_samples == report.total_samples && report.total_samples > 0 ? kExitRuntime
                                                                                     : kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& problems_path,
             const std::string& traces_path, const std::string& csv_path, int max_rounds_flag,
             int samples_flag) {
    RunConfig cfg = resolve_config(flags);
    if (max_rounds_flag >= 0) cfg.max_rounds = max_rounds_flag;
    if (samples_flag > 0) cfg.samples = samples_flag;
    critloop::config::validate(cfg);

    auto problems = load_pool(problems_path);
    auto templates = make_templates(cfg);
    auto handle = make_backend(cfg);

    evalharness::BenchmarkSpec spec;
    spec.problems = std::move(problems);
    spec.engine = make_engine_config(cfg);
    spec.samples = cfg.samples;
    spec.seed = cfg.seed;
    spec.rel_tol = cfg.rel_tol;

    auto report = evalharness::run_benchmark(spec, *handle.owned, templates,
                                             effective_in_flight(cfg, handle));
    if (!traces_path.empty()) io::write_traces(traces_path, report.traces);
    std::cout << evalharness::render_table(report);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
        if (!out) throw io::IoError("cannot write csv: " + csv_path);
        out << evalharness::render_csv(report);
    }
    return kExitOk;
}

int cmd_report(const std::string& problems_path, const std::string& traces_path,
               const std::string& csv_path, double rel_tol) {
    auto problems = io::load_problems(problems_path);
    auto traces = io::read_traces(traces_path);
    auto report = evalharness::score_traces(traces, problems, rel_tol);
    std::cout << evalharness::render_table(report);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
        if (!out) throw io::IoError("cannot write csv: " + csv_path);
        out << evalharness::render_csv(report);
    }
    return kExitOk;
}

int cmd_probe(const CommonFlags& flags, const std::string& problems_path,
              const std::string& out_path) {
    RunConfig cfg = resolve_config(flags);
    auto problems = load_pool(problems_path);
    auto templates = make_templates(cfg);
    auto handle = make_backend(cfg);
    auto econfig = make_engine_config(cfg);
    econfig.max_rounds = 0;

    std::vector<engine::ProbeResult> results;
    std::vector<std::string> ids;
    for (size_t i = 0; i < problems.size(); ++i) {
        const auto& p = problems[i];
        auto trace = engine::run_session(*handle.owned, templates, p, econfig, cfg.seed,
                                         static_cast<int>(i));
        const auto& r0 = trace.rounds.front();
        auto probe = engine::run_probe(*handle.owned, templates, p.question, r0.thought,
                                       r0.summary, econfig, cfg.seed + i);
        results.push_back(std::move(probe));
        ids.push_back(p.id);
    }

    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw io::IoError("cannot write probe results: " + out_path);
        for (size_t i = 0; i < results.size(); ++i) {
            nlohmann::json j;
            j["problem_id"] = ids[i];
            j["followed_format"] = results[i].followed_format;
            j["judgment"] = engine::probe_judgment_name(results[i].judgment);
            j["informative"] = results[i].informative;
            j["revised_answer"] =
                results[i].revised_answer ? nlohmann::json(*results[i].revised_answer)
                                          : nlohmann::json(nullptr);
            out << j.dump() << "\n";
        }
    }

    std::cout << "probed " << results.size() << " problems\n";
    std::cout << "informative    " << evalharness::informativeness_rate(results) << "\n";
    std::cout << "followed format " << evalharness::format_rate(results) << "\n";
    return kExitOk;
}

int cmd_curate(const CommonFlags& flags, const std::string& problems_path,
               const std::string& direct_path, const std::string& out_path, bool filter,
               int max_rounds_flag) {
    (void)max_rounds_flag;
    RunConfig cfg = resolve_config(flags);
    auto pool = load_pool(problems_path);
    auto templates = make_templates(cfg);
    auto handle = make_backend(cfg);

    backend::SamplingParams sampling;
    sampling.temperature = cfg.temperature;
    sampling.top_p = cfg.top_p;
    sampling.max_tokens = cfg.max_tokens;

    if (filter) {
        auto fr = curate::difficulty_filter(pool, *handle.owned, templates, cfg.filter_samples,
                                            cfg.filter_min_incorrect, sampling,
                                            effective_in_flight(cfg, handle), cfg.rel_tol,
                                            cfg.seed, cfg.model_id);
        std::cout << "difficulty filter kept " << fr.retained.size() << " of " << pool.size()
                  << " problems\n";
        pool = std::move(fr.retained);
        if (pool.empty()) throw ConfigError("difficulty filter removed every problem");
    }

    curate::CurateConfig cc;
    cc.teacher_sampling = sampling;
    cc.critic_sampling = sampling;
    cc.refiner_sampling = sampling;
    cc.resample_budget = cfg.resample_budget;
    cc.rel_tol = cfg.rel_tol;
    cc.model_id = cfg.model_id;
    cc.seed = cfg.seed;

    curate::Curator curator(*handle.owned, *handle.owned, *handle.owned, templates, cc);

    std::vector<curate::CurationRecord> records;
    std::vector<curate::CurationFailure> failures;
    for (const auto& p : pool) {
        auto outcome = curator.curate_problem(p);
        if (outcome.record) records.push_back(std::move(*outcome.record));
        if (outcome.failure) failures.push_back(std::move(*outcome.failure));
    }
    if (cfg.second_pass) {
        auto rescued = curator.second_pass_rescue(records);
        for (auto& r : rescued) records.push_back(std::move(r));
    }

    size_t kept_correct = 0, kept_refined = 0, discarded = 0;
    for (const auto& r : records) {
        switch (r.disposition) {
            case curate::Disposition::KeptCorrectPath: ++kept_correct; break;
            case curate::Disposition::KeptRefinedPath: ++kept_refined; break;
            case curate::Disposition::Discarded: ++discarded; break;
        }
    }

    std::vector<std::pair<engine::Problem, engine::Round>> direct_examples;
    if (!direct_path.empty()) {
        for (auto& p : io::load_problems(direct_path)) {
            if (!p.annotated_thought || !p.annotated_summary) continue;
            engine::Round r;
            r.index = 0;
            r.thought = *p.annotated_thought;
            r.summary = *p.annotated_summary;
            r.answer = textproto::extract_boxed_answer(r.summary);
            direct_examples.emplace_back(std::move(p), std::move(r));
        }
    }

    auto instances = curate::build_training_instances(direct_examples, records, templates);
    auto summary = curate::write_training_set(out_path, instances);

    std::cout << "curated " << pool.size() << " problems: " << kept_correct
              << " kept (correct path), " << kept_refined << " kept (refined path), " << discarded
              << " discarded, " << failures.size() << " failed\n";
    for (const auto& f : failures)
        std::cout << "  failure " << f.problem_id << " [" << f.stage << "] " << f.reason << "\n";
    std::cout << "training set: " << summary.total << " instances (" << summary.direct_count
              << " direct, " << summary.critique_refine_count << " critique_refine) -> "
              << out_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"iterative critique-and-refine loop over a chat completion backend"};
    app.require_subcommand(1);

    CommonFlags fl_curate, fl_infer, fl_eval, fl_probe;

    auto* c_curate = app.add_subcommand("curate", "build a training set from a problem pool");
    std::string cu_problems, cu_direct, cu_out;
    bool cu_filter = false;
    add_common(c_curate, fl_curate);
    c_curate->add_option("--problems", cu_problems, "problem pool JSONL")->required();
    c_curate->add_option("--direct", cu_direct, "annotated problems for direct instances");
    c_curate->add_option("--out", cu_out, "training set JSONL output")->required();
    c_curate->add_flag("--filter", cu_filter, "apply the difficulty filter first");

    auto* c_infer = app.add_subcommand("infer", "run sessions and store traces");
    std::string in_problems, in_traces;
    int in_rounds = -1, in_samples = 0;
    add_common(c_infer, fl_infer);
    c_infer->add_option("--problems", in_problems, "problem pool JSONL")->required();
    c_infer->add_option("--traces", in_traces, "trace JSONL output")->required();
    c_infer->add_option("--max-rounds", in_rounds, "refinement rounds after round 0");
    c_infer->add_option("--samples", in_samples, "samples per problem (0 = per-source default)");

    auto* c_eval = app.add_subcommand("eval", "run sessions and print the score report");
    std::string ev_problems, ev_traces, ev_csv;
    int ev_rounds = -1, ev_samples = 0;
    add_common(c_eval, fl_eval);
    c_eval->add_option("--problems", ev_problems, "problem pool JSONL")->required();
    c_eval->add_option("--traces", ev_traces, "also store traces here");
    c_eval->add_option("--csv", ev_csv, "write per-round CSV here");
    c_eval->add_option("--max-rounds", ev_rounds, "refinement rounds after round 0");
    c_eval->add_option("--samples", ev_samples, "samples per problem (0 = per-source default)");

    auto* c_probe = app.add_subcommand("probe", "test self-critique on direct solutions");
    std::string pr_problems, pr_out;
    add_common(c_probe, fl_probe);
    c_probe->add_option("--problems", pr_problems, "problem pool JSONL")->required();
    c_probe->add_option("--out", pr_out, "probe result JSONL output");

    auto* c_report = app.add_subcommand("report", "score stored traces");
    std::string rp_problems, rp_traces, rp_csv;
    double rp_tol = 1e-6;
    c_report->add_option("--problems", rp_problems, "problem pool JSONL")->required();
    c_report->add_option("--traces", rp_traces, "trace JSONL input")->required();
    c_report->add_option("--csv", rp_csv, "write per-round CSV here");
    c_report->add_option("--rel-tol", rp_tol, "relative tolerance for numeric answers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (c_curate->parsed())
            return cmd_curate(fl_curate, cu_problems, cu_direct, cu_out, cu_filter, -1);
        if (c_infer->parsed())
            return cmd_infer(fl_infer, in_problems, in_traces, in_rounds, in_samples);
        if (c_eval->parsed())
            return cmd_eval(fl_eval, ev_problems, ev_traces, ev_csv, ev_rounds, ev_samples);
        if (c_probe->parsed()) return cmd_probe(fl_probe, pr_problems, pr_out);
        if (c_report->parsed()) return cmd_report(rp_problems, rp_traces, rp_csv, rp_tol);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const textproto::TemplateError& e) {
        std::cerr << "template error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const backend::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const engine::SessionError& e) {
        std::cerr << "session error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
