#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "critloop/backend.hpp"
#include "critloop/engine.hpp"
#include "critloop/textproto.hpp"
#include "critloop/verify.hpp"

namespace critloop::curate {

enum class Disposition {
    // Initial answer matched ground truth; the kept target is the critique
    // plus a padded confirmation.
    KeptCorrectPath,
    // Initial answer was wrong, refinement fixed it; the kept target is the
    // critique plus the refined solution.
    KeptRefinedPath,
    Discarded,
};

const char* disposition_name(Disposition d);

struct CurationRecord {
    engine::Problem problem;
    engine::Round initial;
    verify::Verdict verdict0 = verify::Verdict::Unverifiable;
    textproto::Critique critique;
    std::optional<engine::Round> refined;
    std::optional<verify::Verdict> verdict1;
    Disposition disposition = Disposition::Discarded;
    // 1 for the standard pass; 2 for records rescued by re-critiquing a
    // failed refinement.
    int curation_round = 1;
};

// A problem that could not produce a record at all (backend failure, or a
// critique that kept contradicting its conditioning). Distinct from
// Discarded, which is a completed record that failed verification.
struct CurationFailure {
    std::string problem_id;
    std::string stage;  // "initial", "critique", "refine"
    std::string reason;
};

struct CurationOutcome {
    std::optional<CurationRecord> record;
    std::optional<CurationFailure> failure;
};

// A critique that still contradicts its conditioning after every allowed
// resample. curate_problem converts this into a CurationFailure.
class CritiqueMismatch : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct CurateConfig {
    backend::SamplingParams teacher_sampling;
    backend::SamplingParams critic_sampling;
    backend::SamplingParams refiner_sampling;
    // Extra critique attempts allowed when the critique's judgment
    // contradicts the verdict it was conditioned on.
    int resample_budget = 2;
    double rel_tol = 1e-6;
    textproto::DelimiterConfig delimiters;
    std::string model_id;
    std::uint64_t seed = 0;
};

// Drives one problem through initial generation, answer-conditioned
// critique, and (for wrong initial answers) refinement. The three backends
// may be the same object; separating them keeps fixtures per role.
class Curator {
   public:
    Curator(backend::Backend& teacher, backend::Backend& critic, backend::Backend& refiner,
            const textproto::TemplateStore& templates, CurateConfig config = {});

    // Round-0 solution. Problems with annotated reasoning skip the teacher
    // call entirely.
    engine::Round initial_generation(const engine::Problem& p);

    // Critique conditioned on answer correctness. An unverifiable initial
    // answer takes the incorrect-conditioned path. Resamples while the
    // critique's judgment contradicts the conditioning; throws
    // CritiqueMismatch once the budget runs out.
    textproto::Critique generate_critique(const engine::Problem& p, const engine::Round& initial,
                                          verify::Verdict verdict0, int attempt_base = 0);

    engine::Round refine(const engine::Problem& p, const engine::Round& initial,
                         const textproto::Critique& critique, int attempt_base = 0);

    CurationOutcome curate_problem(const engine::Problem& p);

    // Re-critiques failed refinements once more. Rescued solutions come
    // back as fresh records with curation_round = 2; the originals keep
    // their Discarded disposition.
    std::vector<CurationRecord> second_pass_rescue(const std::vector<CurationRecord>& records);

   private:
    backend::Backend& teacher_;
    backend::Backend& critic_;
    backend::Backend& refiner_;
    const textproto::TemplateStore& templates_;
    CurateConfig config_;

    std::uint64_t call_seed(const std::string& problem_id, int stage, int attempt) const;
};

struct FilterDecision {
    enum class Status { Retained, Removed, Unfiltered };

    std::string problem_id;
    int incorrect_count = 0;
    Status status = Status::Unfiltered;
};

struct FilterResult {
    std::vector<engine::Problem> retained;
    std::vector<FilterDecision> decisions;
};

// Difficulty screen: sample each problem k times at the given temperature
// and retain it only when at least min_incorrect samples miss the ground
// truth. Problems whose samples hit backend errors pass through unfiltered
// rather than being dropped on missing evidence.
FilterResult difficulty_filter(const std::vector<engine::Problem>& pool,
                               backend::Backend& backend,
                               const textproto::TemplateStore& templates, int k = 4,
                               int min_incorrect = 2,
                               const backend::SamplingParams& sampling = {},
                               int max_in_flight = 4, double rel_tol = 1e-6,
                               std::uint64_t seed = 0, const std::string& model_id = {});

// One supervised example. messages[0] is the prompt span, messages[1] the
// target span; target_offset is the byte length of the prompt span, so a
// loss mask over the concatenation is zeros for the first target_offset
// bytes and ones after.
struct TrainingInstance {
    std::string kind;  // "direct" or "critique_refine"
    std::vector<backend::Message> messages;
    std::size_t target_offset = 0;
    std::string source_tag;
};

// Builds the mixed training set: direct solutions as-is, kept curation
// records as critique-then-solution targets. Correct-path records pad the
// target with the stock confirmation thought and summary carrying the
// initial answer; refined-path records use the refined solution verbatim.
// Discarded records contribute nothing.
std::vector<TrainingInstance> build_training_instances(
    const std::vector<std::pair<engine::Problem, engine::Round>>& direct_examples,
    const std::vector<CurationRecord>& records, const textproto::TemplateStore& templates,
    const textproto::DelimiterConfig& delims = {});

struct TrainingSetSummary {
    std::size_t total = 0;
    std::size_t direct_count = 0;
    std::size_t critique_refine_count = 0;
};

// Writes instances as JSONL plus a <path>.manifest.json sidecar with
// counts. A failed write removes the partial files before rethrowing.
TrainingSetSummary write_training_set(const std::string& out_path,
                                      const std::vector<TrainingInstance>& instances);

std::vector<TrainingInstance> read_training_set(const std::string& path);

}  // namespace critloop::curate
