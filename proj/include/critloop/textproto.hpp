#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace critloop::textproto {

// Delimiters separating the reasoning span from the concluding summary in
// raw model output. Defaults follow the <think>...</think> convention of
// distilled long-CoT checkpoints; summary tags are optional in the wild and
// trimmed when present.
struct DelimiterConfig {
    std::string thought_open = "<think>";
    std::string thought_close = "</think>";
    std::string summary_open = "<summary>";
    std::string summary_close = "</summary>";
    bool trim_summary_tags = true;
};

// One completion split into its reasoning span (thought) and concluding span
// (summary). prefix/mid/suffix hold the exact delimiter bytes found around
// the two payloads, so prefix + thought + mid + summary + suffix always
// reconstructs the raw completion byte for byte.
struct SegmentedOutput {
    std::string thought;
    std::string summary;
    bool well_formed = false;
    std::string prefix;  // open tag, when present
    std::string mid;     // close tag plus any summary-open wrapping
    std::string suffix;  // summary-close tail, when present
};

// Splits raw completion text on the thought-close delimiter. Degraded input
// (no delimiter) yields well_formed=false with the whole text as summary;
// this never fails.
SegmentedOutput segment_completion(std::string_view raw, const DelimiterConfig& delims = {});

// Inverse of segment_completion: returns the original raw text.
std::string reassemble(const SegmentedOutput& seg);

// Canonical raw form for synthesized output: open + thought + close + summary.
// An empty thought yields just the summary.
std::string compose_raw(std::string_view thought, std::string_view summary,
                        const DelimiterConfig& delims = {});

// Contents of the last balanced \boxed{...} in the text. Brace matching
// honors escaped braces; an unbalanced final box falls back to the previous
// one. nullopt when no box balances.
std::optional<std::string> extract_boxed_answer(std::string_view text);

enum class Judgment { Correct, Incorrect, Unparseable };

// Structured three-part evaluation of a prior summary. raw keeps the text
// exactly as generated so it can be fed back into later prompts.
struct Critique {
    std::string analysis;
    std::string suggestions;
    Judgment judgment = Judgment::Unparseable;
    std::string raw;

    bool operator==(const Critique&) const = default;
};

// Locates the Analysis / Improvement suggestions / Overall judgment sections
// case-insensitively, tolerating <critique> wrapper tags and bold markers.
// Total: every input yields a Critique; missing or unreadable judgment
// sections yield Judgment::Unparseable.
Critique parse_critique(std::string_view text);

const char* judgment_name(Judgment j);

enum class TemplateId {
    CritiqueCorrect,
    CritiqueIncorrect,
    Probe,
    RoundInput,
    RefineInput,
    PadThought,
    PadSummary,
    DirectInput,
};

struct PromptTemplate {
    TemplateId id;
    std::string body;
};

class TemplateError : public std::runtime_error {
  public:
    explicit TemplateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown by render_prompt when a placeholder has no binding; names the
// missing placeholder.
class MissingBinding : public TemplateError {
  public:
    explicit MissingBinding(const std::string& name)
        : TemplateError("missing binding for placeholder '" + name + "'"), placeholder(name) {}
    std::string placeholder;
};

using Bindings = std::map<std::string, std::string>;

// Pure {{name}} substitution; byte-stable for identical inputs. Single
// braces pass through untouched, so literal LaTeX like \boxed{ANSWER}
// survives. Placeholder names are [A-Za-z0-9_]+.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

// The fixed padded-round texts substituted for kept-correct records: a
// verbatim thought plus a summary template with an ANSWER placeholder.
struct PadInstance {
    std::string thought;
    PromptTemplate summary_template;
};

// All prompt and padding bodies used by the pipeline, keyed by id. Bodies
// ship built in; a templates/ directory of one <snake_id>.txt file per id
// can override any of them.
class TemplateStore {
  public:
    static TemplateStore builtin();
    // Builtin bodies overridden by any template file present in dir. A file's
    // single trailing newline, if present, is not part of the body.
    static TemplateStore from_dir(const std::filesystem::path& dir);

    const PromptTemplate& get(TemplateId id) const;
    PadInstance pad_correct_instance() const;

    // Filename (without extension) for a template id, e.g. "round_input".
    static std::string file_stem(TemplateId id);

    std::string version = "v1";

  private:
    std::map<TemplateId, PromptTemplate> templates_;
};

}  // namespace critloop::textproto
