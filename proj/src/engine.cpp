#include "critloop/engine.hpp"

#include <algorithm>
#include <cctype>

namespace critloop::engine {

using backend::Completion;
using backend::FinishReason;
using backend::GenerationRequest;
using backend::Message;
using backend::Role;
using textproto::Judgment;
using textproto::TemplateId;

namespace {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Per-call seed, distinct across samples and rounds of one run seed.
std::uint64_t derive_seed(std::uint64_t seed, int sample_index, int round) {
    std::uint64_t h = seed;
    h = h * 1000003ull + static_cast<std::uint64_t>(sample_index) + 1;
    h = h * 1000003ull + static_cast<std::uint64_t>(round) + 1;
    return h;
}

Completion call(backend::Backend& backend, const GenerationRequest& req,
                const SessionTrace& partial) {
    try {
        return backend.generate(req);
    } catch (const backend::BackendError& e) {
        throw SessionError(e.what(), partial);
    }
}

// Splits a refinement-round completion into the critique slice (text before
// the reasoning span opens) and the remainder.
size_t critique_cut(std::string_view text, const textproto::DelimiterConfig& delims) {
    size_t cut = text.find(delims.thought_open);
    if (cut == std::string_view::npos) cut = text.find(delims.thought_close);
    if (cut == std::string_view::npos) cut = text.size();
    return cut;
}

// Fills thought/summary/answer/flags of a round from the solution span of a
// completion. Returns the summary to carry into the next round's context,
// falling back to prior_carry when this round produced none.
std::string absorb_solution(Round& r, std::string_view solution_text, const Completion& c,
                            const textproto::DelimiterConfig& delims, std::string prior_carry) {
    auto seg = textproto::segment_completion(solution_text, delims);
    r.thought = seg.thought;
    r.summary = seg.summary;
    r.usage = c.usage;
    r.finish_reason = c.finish_reason;
    r.answer = textproto::extract_boxed_answer(seg.summary);
    if (!r.answer) r.answer = textproto::extract_boxed_answer(solution_text);
    if (c.finish_reason != FinishReason::Stop || !r.answer || r.summary.empty()) r.flagged = true;

    if (!r.summary.empty()) return r.summary;
    if (!prior_carry.empty()) return prior_carry;
    return std::string(solution_text);
}

}  // namespace

SessionTrace run_session(backend::Backend& backend, const textproto::TemplateStore& templates,
                         const Problem& problem, const EngineConfig& config, std::uint64_t seed,
                         int sample_index) {
    SessionTrace trace;
    trace.problem_id = problem.id;
    trace.seed = seed;
    trace.sample_index = sample_index;
    trace.max_rounds = config.max_rounds;

    auto make_request = [&](std::string prompt, int round) {
        GenerationRequest req;
        req.messages.push_back({Role::User, std::move(prompt)});
        req.sampling = config.sampling;
        req.model_id = config.model_id;
        req.seed = derive_seed(seed, sample_index, round);
        return req;
    };

    // Round 0: the question alone.
    std::string carry;
    {
        auto req = make_request(
            textproto::render_prompt(templates.get(TemplateId::DirectInput),
                                     {{"question", problem.question}}),
            0);
        Completion c = call(backend, req, trace);
        Round r;
        r.index = 0;
        carry = absorb_solution(r, c.text, c, config.delimiters, "");
        trace.rounds.push_back(std::move(r));
    }

    // Rounds 1..N: question plus latest summary, nothing else.
    for (int n = 1; n <= config.max_rounds; ++n) {
        auto req = make_request(
            textproto::render_prompt(templates.get(TemplateId::RoundInput),
                                     {{"question", problem.question}, {"summary", carry}}),
            n);
        Completion c = call(backend, req, trace);

        Round r;
        r.index = n;
        size_t cut = critique_cut(c.text, config.delimiters);
        r.critique = textproto::parse_critique(std::string_view(c.text).substr(0, cut));

        if (r.critique->judgment == Judgment::Correct) {
            // Previous solution stands. Keep whatever trailing text the
            // model emitted, but the session's result is round n-1.
            auto seg = textproto::segment_completion(std::string_view(c.text).substr(cut),
                                                     config.delimiters);
            r.thought = seg.thought;
            r.summary = seg.summary;
            r.usage = c.usage;
            r.finish_reason = c.finish_reason;
            trace.rounds.push_back(std::move(r));
            trace.stopped_early = true;
            trace.returned_round = n - 1;
            trace.final_answer = trace.rounds[static_cast<size_t>(n - 1)].answer;
            return trace;
        }

        if (r.critique->judgment == Judgment::Unparseable) r.flagged = true;
        carry = absorb_solution(r, std::string_view(c.text).substr(cut), c, config.delimiters,
                                std::move(carry));
        trace.rounds.push_back(std::move(r));
    }

    trace.returned_round = static_cast<int>(trace.rounds.size()) - 1;
    trace.final_answer = trace.rounds.back().answer;
    return trace;
}

const char* probe_judgment_name(ProbeJudgment j) {
    switch (j) {
        case ProbeJudgment::Right: return "right";
        case ProbeJudgment::Wrong: return "wrong";
        case ProbeJudgment::None: return "none";
    }
    return "none";
}

namespace {

// Verdict scan for "conclusion[:] right|wrong". Skips occurrences that echo
// the instruction's own "right/wrong" slash form; the last real verdict
// wins.
struct ConclusionHit {
    ProbeJudgment judgment = ProbeJudgment::None;
    size_t end = 0;
    bool found = false;
};

ConclusionHit find_conclusion(const std::string& lower) {
    ConclusionHit hit;
    static constexpr std::string_view kWord = "conclusion";
    for (size_t pos = lower.find(kWord); pos != std::string::npos;
         pos = lower.find(kWord, pos + 1)) {
        size_t i = pos + kWord.size();
        while (i < lower.size() && (lower[i] == ' ' || lower[i] == '\t')) ++i;
        if (i < lower.size() && lower[i] == ':') ++i;
        while (i < lower.size() &&
               (lower[i] == ' ' || lower[i] == '\t' || lower[i] == '*' || lower[i] == '\'' ||
                lower[i] == '"'))
            ++i;
        ProbeJudgment j = ProbeJudgment::None;
        size_t verdict_len = 0;
        if (lower.compare(i, 5, "right") == 0) {
            j = ProbeJudgment::Right;
            verdict_len = 5;
        } else if (lower.compare(i, 5, "wrong") == 0) {
            j = ProbeJudgment::Wrong;
            verdict_len = 5;
        }
        if (j == ProbeJudgment::None) continue;
        // Instruction echo looks like "right/wrong"; a real verdict does not
        // continue with a slash alternative.
        size_t after = i + verdict_len;
        while (after < lower.size() && (lower[after] == ' ' || lower[after] == '\'')) ++after;
        if (after < lower.size() && lower[after] == '/') continue;
        hit.judgment = j;
        hit.end = i + verdict_len;
        hit.found = true;
    }
    return hit;
}

constexpr std::string_view kAssessmentMarkers[] = {
    "solution is correct",   "solution is incorrect", "solution is right",
    "solution is wrong",     "answer is correct",     "answer is incorrect",
    "reasoning is correct",  "reasoning is sound",    "made an error",
    "made a mistake",        "contains an error",     "no errors",
    "error in step",         "overall judgment",      "steps are correct",
};

}  // namespace

ProbeResult classify_probe_text(std::string_view text) {
    ProbeResult out;
    out.raw = std::string(text);
    std::string lower = to_lower(text);

    ConclusionHit hit = find_conclusion(lower);
    if (hit.found) {
        out.followed_format = true;
        out.judgment = hit.judgment;
        out.informative = true;
        if (hit.judgment == ProbeJudgment::Wrong) {
            out.revised_answer = textproto::extract_boxed_answer(text.substr(hit.end));
        }
        return out;
    }
    for (std::string_view marker : kAssessmentMarkers) {
        if (lower.find(marker) != std::string::npos) {
            out.informative = true;
            break;
        }
    }
    return out;
}

ProbeResult run_probe(backend::Backend& backend, const textproto::TemplateStore& templates,
                      std::string_view question, std::string_view prior_thought,
                      std::string_view prior_summary, const EngineConfig& config,
                      std::optional<std::uint64_t> seed) {
    GenerationRequest req;
    req.messages.push_back(
        {Role::User, textproto::render_prompt(templates.get(TemplateId::DirectInput),
                                              {{"question", std::string(question)}})});
    req.messages.push_back({Role::Assistant, textproto::compose_raw(prior_thought, prior_summary,
                                                                    config.delimiters)});
    req.messages.push_back({Role::User, templates.get(TemplateId::Probe).body});
    req.sampling = config.sampling;
    req.model_id = config.model_id;
    req.seed = seed;

    Completion c = backend.generate(req);
    ProbeResult result = classify_probe_text(c.text);
    result.usage = c.usage;
    return result;
}

}  // namespace critloop::engine
