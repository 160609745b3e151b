#include "critloop/textproto.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <vector>

namespace critloop::textproto {

namespace {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim_view(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

bool is_escaped(std::string_view s, size_t pos) {
    size_t backslashes = 0;
    while (pos > 0 && s[pos - 1] == '\\') {
        ++backslashes;
        --pos;
    }
    return backslashes % 2 == 1;
}

}  // namespace

SegmentedOutput segment_completion(std::string_view raw, const DelimiterConfig& delims) {
    SegmentedOutput out;
    size_t close = raw.find(delims.thought_close);
    if (close == std::string_view::npos) {
        out.summary = std::string(raw);
        return out;
    }
    out.well_formed = true;

    std::string_view head = raw.substr(0, close);
    if (head.substr(0, delims.thought_open.size()) == delims.thought_open) {
        out.prefix = delims.thought_open;
        head.remove_prefix(delims.thought_open.size());
    }
    out.thought = std::string(head);
    out.mid = delims.thought_close;

    std::string_view rest = raw.substr(close + delims.thought_close.size());
    if (delims.trim_summary_tags) {
        size_t open_at = rest.find_first_not_of(" \t\r\n");
        if (open_at != std::string_view::npos &&
            rest.substr(open_at, delims.summary_open.size()) == delims.summary_open) {
            size_t inner_start = open_at + delims.summary_open.size();
            size_t close_at = rest.rfind(delims.summary_close);
            if (close_at != std::string_view::npos && close_at >= inner_start) {
                out.mid += std::string(rest.substr(0, inner_start));
                out.summary = std::string(rest.substr(inner_start, close_at - inner_start));
                out.suffix = std::string(rest.substr(close_at));
                return out;
            }
        }
    }
    out.summary = std::string(rest);
    return out;
}

std::string reassemble(const SegmentedOutput& seg) {
    return seg.prefix + seg.thought + seg.mid + seg.summary + seg.suffix;
}

std::string compose_raw(std::string_view thought, std::string_view summary,
                        const DelimiterConfig& delims) {
    if (thought.empty()) return std::string(summary);
    std::string out;
    out.reserve(delims.thought_open.size() + thought.size() + delims.thought_close.size() +
                summary.size());
    out += delims.thought_open;
    out += thought;
    out += delims.thought_close;
    out += summary;
    return out;
}

std::optional<std::string> extract_boxed_answer(std::string_view text) {
    static constexpr std::string_view kBox = "\\boxed{";

    std::vector<size_t> starts;
    for (size_t pos = text.find(kBox); pos != std::string_view::npos;
         pos = text.find(kBox, pos + 1)) {
        starts.push_back(pos);
    }
    // Later boxes win; an unbalanced one falls back to the previous.
    for (auto it = starts.rbegin(); it != starts.rend(); ++it) {
        size_t i = *it + kBox.size();
        int depth = 1;
        for (; i < text.size(); ++i) {
            char c = text[i];
            if ((c == '{' || c == '}') && is_escaped(text, i)) continue;
            if (c == '{') ++depth;
            if (c == '}' && --depth == 0) {
                return std::string(text.substr(*it + kBox.size(), i - *it - kBox.size()));
            }
        }
    }
    return std::nullopt;
}

namespace {

// A header line is the bare section name, or the name followed by ':' and
// optional same-line content, after stripping bold/heading markers.
struct SectionHit {
    size_t content_begin = 0;  // offset of same-line content (may be line end)
    size_t line_begin = 0;
    bool found = false;
};

SectionHit find_section_header(std::string_view text, std::string_view name) {
    std::string lower = to_lower(text);
    std::string lname = to_lower(name);
    size_t line_start = 0;
    while (line_start <= lower.size()) {
        size_t line_end = lower.find('\n', line_start);
        if (line_end == std::string::npos) line_end = lower.size();
        std::string_view line(lower.data() + line_start, line_end - line_start);

        size_t b = line.find_first_not_of(" \t*#>");
        if (b != std::string_view::npos && line.compare(b, lname.size(), lname) == 0) {
            std::string_view after = line.substr(b + lname.size());
            size_t sep = after.find_first_not_of(" \t*");
            if (sep == std::string_view::npos) {
                return {line_end, line_start, true};
            }
            if (after[sep] == ':') {
                size_t rel = b + lname.size() + sep + 1;
                return {line_start + rel, line_start, true};
            }
        }
        if (line_end == lower.size()) break;
        line_start = line_end + 1;
    }
    return {};
}

std::string clean_section(std::string_view s) {
    std::string_view t = trim_view(s);
    // Drop stray bold markers hugging the section body.
    while (t.size() >= 2 && t.substr(0, 2) == "**") t.remove_prefix(2);
    while (t.size() >= 2 && t.substr(t.size() - 2) == "**") t.remove_suffix(2);
    return std::string(trim_view(t));
}

}  // namespace

Critique parse_critique(std::string_view text) {
    Critique out;
    out.raw = std::string(text);

    auto analysis = find_section_header(text, "analysis");
    auto suggestions = find_section_header(text, "improvement suggestions");
    auto judgment = find_section_header(text, "overall judgment");
    if (!judgment.found) return out;

    std::string jtext = to_lower(text.substr(judgment.content_begin));
    if (jtext.find("incorrect") != std::string::npos) {
        out.judgment = Judgment::Incorrect;
    } else if (jtext.find("correct") != std::string::npos) {
        out.judgment = Judgment::Correct;
    } else {
        return out;  // header present but no readable verdict
    }

    if (analysis.found) {
        size_t end = suggestions.found ? suggestions.line_begin : judgment.line_begin;
        if (end > analysis.content_begin) {
            out.analysis = clean_section(text.substr(analysis.content_begin, end - analysis.content_begin));
        }
    }
    if (suggestions.found && judgment.line_begin > suggestions.content_begin) {
        out.suggestions = clean_section(
            text.substr(suggestions.content_begin, judgment.line_begin - suggestions.content_begin));
    }
    return out;
}

const char* judgment_name(Judgment j) {
    switch (j) {
        case Judgment::Correct: return "correct";
        case Judgment::Incorrect: return "incorrect";
        case Judgment::Unparseable: return "unparseable";
    }
    return "unparseable";
}

namespace {

bool is_placeholder_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    const std::string& body = tmpl.body;
    std::string out;
    out.reserve(body.size());
    size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{' && i + 1 < body.size() && body[i + 1] == '{') {
            size_t name_begin = i + 2;
            size_t j = name_begin;
            while (j < body.size() && is_placeholder_char(body[j])) ++j;
            if (j > name_begin && j + 1 < body.size() && body[j] == '}' && body[j + 1] == '}') {
                std::string name = body.substr(name_begin, j - name_begin);
                auto it = bindings.find(name);
                if (it == bindings.end()) throw MissingBinding(name);
                out += it->second;
                i = j + 2;
                continue;
            }
        }
        out += body[i++];
    }
    return out;
}

namespace {

const char* builtin_body(TemplateId id) {
    switch (id) {
        case TemplateId::CritiqueCorrect:
            return "You are tasked with analyzing your last solution to a problem and providing "
                   "constructive feedback based on previous solutions. Do NOT provide direct "
                   "solutions.\n"
                   "\n"
                   "You have already know your last solution to the problem is correct.\n"
                   "\n"
                   "Important: Do NOT mention something like \"you have already know your last "
                   "solution is correct\" in your feedback.\n"
                   "\n"
                   "Structure your response using the following format (without <format> tags):\n"
                   "\n"
                   "<format>\n"
                   "\n"
                   "Analysis:\n"
                   "\n"
                   "{Analysis}\n"
                   "\n"
                   "Improvement suggestions:\n"
                   "\n"
                   "{Suggestions}\n"
                   "\n"
                   "Overall judgment:\n"
                   "\n"
                   "{Correct}\n"
                   "\n"
                   "</format>";
        case TemplateId::CritiqueIncorrect:
            return "You are tasked with analyzing your last solution to a problem and providing "
                   "constructive feedback based on previous solutions. Do NOT provide direct "
                   "solutions.\n"
                   "\n"
                   "You have already know your last solution to the problem is incorrect.\n"
                   "\n"
                   "Important: Do NOT mention something like \"you have already know your last "
                   "solution is incorrect\" in your feedback.\n"
                   "\n"
                   "Structure your response using the following format (without <format> tags):\n"
                   "\n"
                   "<format>\n"
                   "\n"
                   "Analysis:\n"
                   "\n"
                   "{Analysis}\n"
                   "\n"
                   "Improvement suggestions:\n"
                   "\n"
                   "{Suggestions}\n"
                   "\n"
                   "Overall judgment:\n"
                   "\n"
                   "{Incorrect}\n"
                   "\n"
                   "</format>";
        case TemplateId::Probe:
            return "Please critique each reasoning step of your previous solution to this problem "
                   "and explain whether your solution is correct or not.\n"
                   "\n"
                   "In your critique, you must verify whether any of your previous reasoning steps "
                   "contain logical or computational errors and suggest ways to correct them if any "
                   "errors are found.\n"
                   "\n"
                   "After critiquing your solution, you must conclude your judgment with "
                   "'Conclusion: right/wrong [END]'.\n"
                   "\n"
                   "If your conclusion is 'right', stop generating. If your conclusion is 'wrong', "
                   "improve your previous solution based on your critique, and present the final "
                   "answer in $\\boxed{ANSWER}$.\n"
                   "\n"
                   "Critique:";
        case TemplateId::RoundInput:
            return "{{question}}\n"
                   "\n"
                   "Previous solution summary:\n"
                   "{{summary}}\n"
                   "\n"
                   "Critique the previous solution summary, then refine the solution if it is "
                   "incorrect. Structure your critique using the following format:\n"
                   "\n"
                   "Analysis:\n"
                   "\n"
                   "{Analysis}\n"
                   "\n"
                   "Improvement suggestions:\n"
                   "\n"
                   "{Suggestions}\n"
                   "\n"
                   "Overall judgment:\n"
                   "\n"
                   "{Correct/Incorrect}\n"
                   "\n"
                   "If the overall judgment is Incorrect, continue with a refined solution and "
                   "present the final answer in $\\boxed{ANSWER}$.";
        case TemplateId::RefineInput:
            return "{{question}}\n"
                   "\n"
                   "Previous solution summary:\n"
                   "{{summary}}\n"
                   "\n"
                   "Critique of the previous solution:\n"
                   "{{critique}}\n"
                   "\n"
                   "Refine the solution based on the critique and present the final answer in "
                   "$\\boxed{ANSWER}$.";
        case TemplateId::PadThought:
            return "<think>\n"
                   "From my last analysis, I have already got the right answer.\n"
                   "</think>";
        case TemplateId::PadSummary:
            return "<summary>\n"
                   "My previous solution is correct. Therefore, the answer is "
                   "$\\boxed{{{ANSWER}}}$.\n"
                   "</summary>";
        case TemplateId::DirectInput:
            return "{{question}}";
    }
    throw TemplateError("unknown template id");
}

constexpr TemplateId kAllTemplates[] = {
    TemplateId::CritiqueCorrect, TemplateId::CritiqueIncorrect, TemplateId::Probe,
    TemplateId::RoundInput,      TemplateId::RefineInput,       TemplateId::PadThought,
    TemplateId::PadSummary,      TemplateId::DirectInput,
};

}  // namespace

TemplateStore TemplateStore::builtin() {
    TemplateStore store;
    for (TemplateId id : kAllTemplates) {
        store.templates_[id] = PromptTemplate{id, builtin_body(id)};
    }
    return store;
}

TemplateStore TemplateStore::from_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw TemplateError("template directory not found: " + dir.string());
    }
    TemplateStore store = builtin();
    for (TemplateId id : kAllTemplates) {
        auto path = dir / (file_stem(id) + ".txt");
        if (!std::filesystem::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw TemplateError("cannot read template file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string body = buf.str();
        if (!body.empty() && body.back() == '\n') body.pop_back();
        store.templates_[id].body = std::move(body);
    }
    store.version = "dir:" + dir.filename().string();
    return store;
}

const PromptTemplate& TemplateStore::get(TemplateId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw TemplateError("template not loaded");
    return it->second;
}

PadInstance TemplateStore::pad_correct_instance() const {
    return PadInstance{get(TemplateId::PadThought).body, get(TemplateId::PadSummary)};
}

std::string TemplateStore::file_stem(TemplateId id) {
    switch (id) {
        case TemplateId::CritiqueCorrect: return "critique_correct";
        case TemplateId::CritiqueIncorrect: return "critique_incorrect";
        case TemplateId::Probe: return "probe";
        case TemplateId::RoundInput: return "round_input";
        case TemplateId::RefineInput: return "refine_input";
        case TemplateId::PadThought: return "pad_thought";
        case TemplateId::PadSummary: return "pad_summary";
        case TemplateId::DirectInput: return "direct_input";
    }
    throw TemplateError("unknown template id");
}

}  // namespace critloop::textproto
