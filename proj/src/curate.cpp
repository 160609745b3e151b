#include "critloop/curate.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace critloop::curate {

using backend::GenerationRequest;
using backend::Message;
using backend::Role;
using nlohmann::json;
using textproto::Judgment;
using textproto::TemplateId;
using verify::Verdict;

const char* disposition_name(Disposition d) {
    switch (d) {
        case Disposition::KeptCorrectPath: return "kept_correct_path";
        case Disposition::KeptRefinedPath: return "kept_refined_path";
        case Disposition::Discarded: return "discarded";
    }
    return "discarded";
}

namespace {

std::uint64_t fnv64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Shared solution-output handling: split, pull the boxed answer (falling
// back to the whole text), flag degraded output.
engine::Round absorb(int index, const backend::Completion& c,
                     const textproto::DelimiterConfig& delims) {
    engine::Round r;
    r.index = index;
    auto seg = textproto::segment_completion(c.text, delims);
    r.thought = seg.thought;
    r.summary = seg.summary;
    r.usage = c.usage;
    r.finish_reason = c.finish_reason;
    r.answer = textproto::extract_boxed_answer(seg.summary);
    if (!r.answer) r.answer = textproto::extract_boxed_answer(c.text);
    if (c.finish_reason != backend::FinishReason::Stop || !r.answer || r.summary.empty())
        r.flagged = true;
    return r;
}

}  // namespace

Curator::Curator(backend::Backend& teacher, backend::Backend& critic, backend::Backend& refiner,
                 const textproto::TemplateStore& templates, CurateConfig config)
    : teacher_(teacher),
      critic_(critic),
      refiner_(refiner),
      templates_(templates),
      config_(std::move(config)) {}

std::uint64_t Curator::call_seed(const std::string& problem_id, int stage, int attempt) const {
    std::uint64_t h = fnv64(problem_id);
    h = h * 1000003ull + config_.seed;
    h = h * 1000003ull + static_cast<std::uint64_t>(stage) + 1;
    h = h * 1000003ull + static_cast<std::uint64_t>(attempt) + 1;
    return h;
}

engine::Round Curator::initial_generation(const engine::Problem& p) {
    if (p.annotated_thought && p.annotated_summary) {
        engine::Round r;
        r.index = 0;
        r.thought = *p.annotated_thought;
        r.summary = *p.annotated_summary;
        r.answer = textproto::extract_boxed_answer(r.summary);
        if (!r.answer) r.flagged = true;
        return r;
    }
    GenerationRequest req;
    req.messages.push_back({Role::User,
                            textproto::render_prompt(templates_.get(TemplateId::DirectInput),
                                                     {{"question", p.question}})});
    req.sampling = config_.teacher_sampling;
    req.model_id = config_.model_id;
    req.seed = call_seed(p.id, 0, 0);
    return absorb(0, teacher_.generate(req), config_.delimiters);
}

textproto::Critique Curator::generate_critique(const engine::Problem& p,
                                               const engine::Round& initial, Verdict verdict0,
                                               int attempt_base) {
    const bool correct = verdict0 == Verdict::CorrectAnswer;
    const Judgment expected = correct ? Judgment::Correct : Judgment::Incorrect;
    const auto& tmpl =
        templates_.get(correct ? TemplateId::CritiqueCorrect : TemplateId::CritiqueIncorrect);

    // The critic sees the instruction, the question, and the summary under
    // review as one user turn; earlier reasoning stays out of context.
    std::string prompt = tmpl.body;
    prompt += "\n\n";
    prompt += p.question;
    prompt += "\n\n";
    prompt += initial.summary;

    const int attempts = 1 + config_.resample_budget;
    for (int i = 0; i < attempts; ++i) {
        GenerationRequest req;
        req.messages.push_back({Role::User, prompt});
        req.sampling = config_.critic_sampling;
        req.model_id = config_.model_id;
        req.seed = call_seed(p.id, 1, attempt_base + i);
        backend::Completion c = critic_.generate(req);

        // Critic output may carry its own reasoning span; the critique
        // proper is what follows it.
        auto seg = textproto::segment_completion(c.text, config_.delimiters);
        std::string_view candidate = seg.well_formed ? std::string_view(seg.summary)
                                                     : std::string_view(c.text);
        textproto::Critique crit = textproto::parse_critique(candidate);
        if (crit.judgment == expected) return crit;
    }
    throw CritiqueMismatch("critique judgment contradicted " +
                           std::string(verify::verdict_name(verdict0)) + " conditioning for " +
                           p.id + " after " + std::to_string(attempts) + " attempts");
}

engine::Round Curator::refine(const engine::Problem& p, const engine::Round& initial,
                              const textproto::Critique& critique, int attempt_base) {
    GenerationRequest req;
    req.messages.push_back(
        {Role::User, textproto::render_prompt(templates_.get(TemplateId::RefineInput),
                                              {{"question", p.question},
                                               {"summary", initial.summary},
                                               {"critique", critique.raw}})});
    req.sampling = config_.refiner_sampling;
    req.model_id = config_.model_id;
    req.seed = call_seed(p.id, 2, attempt_base);
    return absorb(1, refiner_.generate(req), config_.delimiters);
}

CurationOutcome Curator::curate_problem(const engine::Problem& p) {
    CurationOutcome out;

    engine::Round initial;
    try {
        initial = initial_generation(p);
    } catch (const backend::BackendError& e) {
        out.failure = CurationFailure{p.id, "initial", e.what()};
        return out;
    }

    CurationRecord rec;
    rec.problem = p;
    rec.initial = initial;
    rec.verdict0 = verify::score_answer(initial.answer, p.ground_truth, config_.rel_tol);

    try {
        rec.critique = generate_critique(p, initial, rec.verdict0);
    } catch (const backend::BackendError& e) {
        out.failure = CurationFailure{p.id, "critique", e.what()};
        return out;
    } catch (const CritiqueMismatch& e) {
        out.failure = CurationFailure{p.id, "critique", e.what()};
        return out;
    }

    if (rec.verdict0 == Verdict::CorrectAnswer) {
        rec.disposition = Disposition::KeptCorrectPath;
        out.record = std::move(rec);
        return out;
    }

    try {
        rec.refined = refine(p, initial, rec.critique);
    } catch (const backend::BackendError& e) {
        out.failure = CurationFailure{p.id, "refine", e.what()};
        return out;
    }
    rec.verdict1 = verify::score_answer(rec.refined->answer, p.ground_truth, config_.rel_tol);
    rec.disposition = *rec.verdict1 == Verdict::CorrectAnswer ? Disposition::KeptRefinedPath
                                                              : Disposition::Discarded;
    out.record = std::move(rec);
    return out;
}

std::vector<CurationRecord> Curator::second_pass_rescue(
    const std::vector<CurationRecord>& records) {
    std::vector<CurationRecord> rescued;
    for (const auto& rec : records) {
        if (rec.disposition != Disposition::Discarded || !rec.refined || rec.curation_round != 1)
            continue;
        // Seed offsets keep the rescue attempts distinct from first-pass
        // calls for the same problem.
        constexpr int kRescueBase = 100;
        try {
            textproto::Critique crit2 =
                generate_critique(rec.problem, *rec.refined, *rec.verdict1, kRescueBase);
            engine::Round round2 = refine(rec.problem, *rec.refined, crit2, kRescueBase);
            Verdict v2 =
                verify::score_answer(round2.answer, rec.problem.ground_truth, config_.rel_tol);
            if (v2 != Verdict::CorrectAnswer) continue;
            CurationRecord out;
            out.problem = rec.problem;
            out.initial = *rec.refined;
            out.verdict0 = *rec.verdict1;
            out.critique = std::move(crit2);
            out.refined = std::move(round2);
            out.verdict1 = v2;
            out.disposition = Disposition::KeptRefinedPath;
            out.curation_round = 2;
            rescued.push_back(std::move(out));
        } catch (const backend::BackendError&) {
            continue;
        } catch (const CritiqueMismatch&) {
            continue;
        }
    }
    return rescued;
}

FilterResult difficulty_filter(const std::vector<engine::Problem>& pool,
                               backend::Backend& backend_ref,
                               const textproto::TemplateStore& templates, int k, int min_incorrect,
                               const backend::SamplingParams& sampling, int max_in_flight,
                               double rel_tol, std::uint64_t seed, const std::string& model_id) {
    std::vector<GenerationRequest> requests;
    requests.reserve(pool.size() * static_cast<size_t>(k));
    for (const auto& p : pool) {
        for (int i = 0; i < k; ++i) {
            GenerationRequest req;
            req.messages.push_back({Role::User,
                                    textproto::render_prompt(templates.get(TemplateId::DirectInput),
                                                             {{"question", p.question}})});
            req.sampling = sampling;
            req.model_id = model_id;
            req.seed = fnv64(p.id) * 1000003ull + seed * 31ull + static_cast<std::uint64_t>(i);
            requests.push_back(std::move(req));
        }
    }

    auto items = backend::generate_batch(backend_ref, requests, max_in_flight);

    FilterResult result;
    for (size_t pi = 0; pi < pool.size(); ++pi) {
        FilterDecision d;
        d.problem_id = pool[pi].id;
        bool any_error = false;
        int incorrect = 0;
        for (int i = 0; i < k; ++i) {
            const auto& item = items[pi * static_cast<size_t>(k) + static_cast<size_t>(i)];
            if (!item.ok()) {
                any_error = true;
                continue;
            }
            auto seg = textproto::segment_completion(item.completion->text);
            auto answer = textproto::extract_boxed_answer(seg.summary);
            if (!answer) answer = textproto::extract_boxed_answer(item.completion->text);
            if (verify::score_answer(answer, pool[pi].ground_truth, rel_tol) !=
                Verdict::CorrectAnswer)
                ++incorrect;
        }
        d.incorrect_count = incorrect;
        if (any_error) {
            d.status = FilterDecision::Status::Unfiltered;
            result.retained.push_back(pool[pi]);
        } else if (incorrect >= min_incorrect) {
            d.status = FilterDecision::Status::Retained;
            result.retained.push_back(pool[pi]);
        } else {
            d.status = FilterDecision::Status::Removed;
        }
        result.decisions.push_back(std::move(d));
    }
    return result;
}

std::vector<TrainingInstance> build_training_instances(
    const std::vector<std::pair<engine::Problem, engine::Round>>& direct_examples,
    const std::vector<CurationRecord>& records, const textproto::TemplateStore& templates,
    const textproto::DelimiterConfig& delims) {
    std::vector<TrainingInstance> out;
    out.reserve(direct_examples.size() + records.size());

    auto tag_for = [](const engine::Problem& p) {
        return p.source.empty() ? p.id : p.source;
    };

    for (const auto& [problem, round] : direct_examples) {
        TrainingInstance inst;
        inst.kind = "direct";
        std::string prompt = textproto::render_prompt(templates.get(TemplateId::DirectInput),
                                                      {{"question", problem.question}});
        inst.target_offset = prompt.size();
        inst.messages.push_back({Role::User, std::move(prompt)});
        inst.messages.push_back(
            {Role::Assistant, textproto::compose_raw(round.thought, round.summary, delims)});
        inst.source_tag = tag_for(problem);
        out.push_back(std::move(inst));
    }

    for (const auto& rec : records) {
        if (rec.disposition == Disposition::Discarded) continue;
        TrainingInstance inst;
        inst.kind = "critique_refine";
        std::string prompt = textproto::render_prompt(
            templates.get(TemplateId::RoundInput),
            {{"question", rec.problem.question}, {"summary", rec.initial.summary}});
        inst.target_offset = prompt.size();

        std::string target = rec.critique.raw;
        target += "\n\n";
        if (rec.disposition == Disposition::KeptCorrectPath) {
            auto pad = templates.pad_correct_instance();
            target += pad.thought;
            target += "\n\n";
            target += textproto::render_prompt(pad.summary_template, {{"ANSWER", *rec.initial.answer}});
        } else {
            target += textproto::compose_raw(rec.refined->thought, rec.refined->summary, delims);
        }

        inst.messages.push_back({Role::User, std::move(prompt)});
        inst.messages.push_back({Role::Assistant, std::move(target)});
        inst.source_tag = tag_for(rec.problem);
        out.push_back(std::move(inst));
    }
    return out;
}

TrainingSetSummary write_training_set(const std::string& out_path,
                                      const std::vector<TrainingInstance>& instances) {
    const std::string manifest_path = out_path + ".manifest.json";
    TrainingSetSummary summary;
    std::map<std::string, std::size_t> by_source;

    try {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write training set: " + out_path);
        for (const auto& inst : instances) {
            json j;
            j["kind"] = inst.kind;
            j["messages"] = json::array();
            for (const auto& m : inst.messages)
                j["messages"].push_back(
                    {{"role", backend::role_name(m.role)}, {"content", m.content}});
            j["target_offset"] = inst.target_offset;
            j["source_tag"] = inst.source_tag;
            out << j.dump() << "\n";
            if (!out) throw std::runtime_error("write failed: " + out_path);

            ++summary.total;
            if (inst.kind == "direct")
                ++summary.direct_count;
            else
                ++summary.critique_refine_count;
            ++by_source[inst.source_tag];
        }
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + out_path);

        json manifest;
        manifest["schema"] = "training/v1";
        manifest["total"] = summary.total;
        manifest["direct"] = summary.direct_count;
        manifest["critique_refine"] = summary.critique_refine_count;
        manifest["by_source"] = json::object();
        for (const auto& [src, n] : by_source) manifest["by_source"][src] = n;
        std::ofstream mout(manifest_path, std::ios::binary | std::ios::trunc);
        if (!mout) throw std::runtime_error("cannot write manifest: " + manifest_path);
        mout << manifest.dump(2) << "\n";
        mout.flush();
        if (!mout) throw std::runtime_error("write failed: " + manifest_path);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(out_path, ec);
        std::filesystem::remove(manifest_path, ec);
        throw;
    }
    return summary;
}

std::vector<TrainingInstance> read_training_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open training set: " + path);
    std::vector<TrainingInstance> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        TrainingInstance inst;
        inst.kind = j.at("kind").get<std::string>();
        for (const auto& jm : j.at("messages")) {
            Message m;
            m.role = backend::role_from_name(jm.at("role").get<std::string>());
            m.content = jm.at("content").get<std::string>();
            inst.messages.push_back(std::move(m));
        }
        inst.target_offset = j.at("target_offset").get<std::size_t>();
        inst.source_tag = j.value("source_tag", std::string());
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace critloop::curate
