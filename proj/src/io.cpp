#include "critloop/io.hpp"

#include <fstream>

namespace critloop::io {

using nlohmann::json;

namespace {

json parse_line(const std::string& path, size_t lineno, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
}

}  // namespace

std::vector<engine::Problem> load_problems(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open problems file: " + path);
    std::vector<engine::Problem> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(path, lineno, line);
        engine::Problem p;
        if (!j.contains("id") || !j.contains("question"))
            throw IoError(path + ":" + std::to_string(lineno) + ": problem needs id and question");
        p.id = j["id"].get<std::string>();
        p.question = j["question"].get<std::string>();
        p.ground_truth = j.value("ground_truth", std::string());
        p.source = j.value("source", std::string());
        p.subject = j.value("subject", std::string());
        if (j.contains("annotated_thought") && !j["annotated_thought"].is_null())
            p.annotated_thought = j["annotated_thought"].get<std::string>();
        if (j.contains("annotated_summary") && !j["annotated_summary"].is_null())
            p.annotated_summary = j["annotated_summary"].get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

json trace_to_json(const engine::SessionTrace& trace) {
    json j;
    j["schema"] = "trace/v1";
    j["problem_id"] = trace.problem_id;
    j["seed"] = trace.seed;
    j["sample_index"] = trace.sample_index;
    j["max_rounds"] = trace.max_rounds;
    j["stopped_early"] = trace.stopped_early;
    j["returned_round"] = trace.returned_round;
    j["final_answer"] = trace.final_answer ? json(*trace.final_answer) : json(nullptr);
    j["rounds"] = json::array();
    for (const auto& r : trace.rounds) {
        json jr;
        jr["index"] = r.index;
        jr["thought"] = r.thought;
        jr["summary"] = r.summary;
        jr["answer"] = r.answer ? json(*r.answer) : json(nullptr);
        jr["prompt_tokens"] = r.usage.prompt_tokens;
        jr["completion_tokens"] = r.usage.completion_tokens;
        jr["finish_reason"] = backend::finish_reason_name(r.finish_reason);
        jr["flagged"] = r.flagged;
        if (r.critique) {
            jr["critique"] = {{"analysis", r.critique->analysis},
                              {"suggestions", r.critique->suggestions},
                              {"judgment", textproto::judgment_name(r.critique->judgment)},
                              {"raw", r.critique->raw}};
        } else {
            jr["critique"] = nullptr;
        }
        j["rounds"].push_back(std::move(jr));
    }
    return j;
}

engine::SessionTrace trace_from_json(const json& j) {
    if (j.value("schema", std::string()) != "trace/v1")
        throw IoError("unsupported trace schema: " + j.value("schema", std::string("<missing>")));
    engine::SessionTrace t;
    t.problem_id = j.at("problem_id").get<std::string>();
    t.seed = j.value("seed", std::uint64_t{0});
    t.sample_index = j.value("sample_index", 0);
    t.max_rounds = j.value("max_rounds", 0);
    t.stopped_early = j.value("stopped_early", false);
    t.returned_round = j.value("returned_round", 0);
    if (j.contains("final_answer") && !j["final_answer"].is_null())
        t.final_answer = j["final_answer"].get<std::string>();
    for (const auto& jr : j.at("rounds")) {
        engine::Round r;
        r.index = jr.at("index").get<int>();
        r.thought = jr.value("thought", std::string());
        r.summary = jr.value("summary", std::string());
        if (jr.contains("answer") && !jr["answer"].is_null())
            r.answer = jr["answer"].get<std::string>();
        r.usage.prompt_tokens = jr.value("prompt_tokens", std::int64_t{0});
        r.usage.completion_tokens = jr.value("completion_tokens", std::int64_t{0});
        r.finish_reason = backend::finish_reason_from_name(jr.value("finish_reason", "stop"));
        r.flagged = jr.value("flagged", false);
        if (jr.contains("critique") && !jr["critique"].is_null()) {
            const json& jc = jr["critique"];
            textproto::Critique c;
            c.analysis = jc.value("analysis", std::string());
            c.suggestions = jc.value("suggestions", std::string());
            c.raw = jc.value("raw", std::string());
            std::string name = jc.value("judgment", "unparseable");
            c.judgment = name == "correct"    ? textproto::Judgment::Correct
                         : name == "incorrect" ? textproto::Judgment::Incorrect
                                               : textproto::Judgment::Unparseable;
            r.critique = std::move(c);
        }
        t.rounds.push_back(std::move(r));
    }
    return t;
}

void write_traces(const std::string& path, const std::vector<engine::SessionTrace>& traces) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write traces file: " + path);
    for (const auto& t : traces) out << trace_to_json(t).dump() << "\n";
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

std::vector<engine::SessionTrace> read_traces(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open traces file: " + path);
    std::vector<engine::SessionTrace> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        out.push_back(trace_from_json(parse_line(path, lineno, line)));
    }
    return out;
}

}  // namespace critloop::io
