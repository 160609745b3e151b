#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "critloop/engine.hpp"
#include "json.hpp"

namespace critloop::io {

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Problems arrive as JSONL, one object per line: id and question required,
// ground_truth/source/subject/annotated_thought/annotated_summary optional.
std::vector<engine::Problem> load_problems(const std::string& path);

// trace/v1: the stable on-disk form of a session. to/from are exact
// inverses so downstream scoring never depends on in-memory state.
nlohmann::json trace_to_json(const engine::SessionTrace& trace);
engine::SessionTrace trace_from_json(const nlohmann::json& j);

void write_traces(const std::string& path, const std::vector<engine::SessionTrace>& traces);
std::vector<engine::SessionTrace> read_traces(const std::string& path);

}  // namespace critloop::io
