#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "critloop/backend.hpp"
#include "critloop/textproto.hpp"

namespace critloop::engine {

struct Problem {
    std::string id;
    std::string question;
    std::string ground_truth;
    std::string source;
    std::string subject;
    // Pre-existing reasoning for this problem, used by curation to skip the
    // initial generation call.
    std::optional<std::string> annotated_thought;
    std::optional<std::string> annotated_summary;
};

// One model turn of a session. Round 0 is direct inference and has no
// critique; later rounds critique the previous summary before refining.
struct Round {
    int index = 0;
    std::optional<textproto::Critique> critique;
    std::string thought;
    std::string summary;
    std::optional<std::string> answer;
    backend::TokenUsage usage;
    backend::FinishReason finish_reason = backend::FinishReason::Stop;
    // Degraded output: truncation, missing answer, empty summary, or an
    // unreadable critique. Flagged rounds still participate in the loop.
    bool flagged = false;

    bool operator==(const Round&) const = default;
};

struct SessionTrace {
    std::string problem_id;
    std::vector<Round> rounds;
    bool stopped_early = false;
    // Index of the round whose summary is the session's result. When a
    // critique at round n judges the previous solution correct, this is
    // n-1; otherwise it is the last round.
    int returned_round = 0;
    std::optional<std::string> final_answer;
    std::uint64_t seed = 0;
    int sample_index = 0;
    int max_rounds = 0;

    bool operator==(const SessionTrace&) const = default;
};

struct EngineConfig {
    int max_rounds = 3;
    backend::SamplingParams sampling;
    textproto::DelimiterConfig delimiters;
    std::string model_id;
};

// Backend failure mid-session. Rounds completed before the failure ride
// along so callers can log partial work.
class SessionError : public std::runtime_error {
   public:
    SessionError(const std::string& what, SessionTrace partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const SessionTrace& partial() const { return partial_; }

   private:
    SessionTrace partial_;
};

// Runs one critique-and-refine session: direct inference, then up to
// max_rounds rounds that each see only the question and the latest summary.
// Stops early when a round's critique judges the previous solution correct.
SessionTrace run_session(backend::Backend& backend, const textproto::TemplateStore& templates,
                         const Problem& problem, const EngineConfig& config = {},
                         std::uint64_t seed = 0, int sample_index = 0);

enum class ProbeJudgment { Right, Wrong, None };

const char* probe_judgment_name(ProbeJudgment j);

struct ProbeResult {
    // The response ended in a readable "Conclusion: right|wrong" verdict.
    bool followed_format = false;
    ProbeJudgment judgment = ProbeJudgment::None;
    // The response engages with correctness at all, verdict line or not.
    bool informative = false;
    std::optional<std::string> revised_answer;
    backend::TokenUsage usage;
    std::string raw;
};

// Marker-based classification of a self-critique response. Deterministic by
// construction so rates are reproducible; no model in the loop.
ProbeResult classify_probe_text(std::string_view text);

// Asks the model to critique its own earlier solution to the question. The
// conversation replays the original exchange, then appends the critique
// instruction as a fresh user turn.
ProbeResult run_probe(backend::Backend& backend, const textproto::TemplateStore& templates,
                      std::string_view question, std::string_view prior_thought,
                      std::string_view prior_summary, const EngineConfig& config = {},
                      std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace critloop::engine
