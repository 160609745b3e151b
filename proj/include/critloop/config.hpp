#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace critloop::config {

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Everything a run can be told from a config file; CLI flags override
// field by field after loading.
struct RunConfig {
    std::string backend_kind = "scripted";  // "scripted" or "live"
    std::string fixture_path;
    std::string base_url;  // live backend; defaults from DC_BASE_URL
    std::string api_key;   // live backend; defaults from DC_API_KEY
    std::string model_id;

    std::string problems_path;
    std::string out_path;
    std::string traces_path;
    std::string templates_dir;

    std::uint64_t seed = 0;
    int max_in_flight = 4;
    int max_rounds = 3;
    // 0 means pick per problem: 16 samples for competition-style sources,
    // 4 otherwise.
    int samples = 0;

    double temperature = 0.6;
    double top_p = 1.0;
    int max_tokens = 32768;
    double rel_tol = 1e-6;

    int filter_samples = 4;
    int filter_min_incorrect = 2;
    int resample_budget = 2;
    bool second_pass = false;
};

// Substitutes ${NAME} with the environment variable's value (empty when
// unset). Names are [A-Z0-9_].
std::string interpolate_env(const std::string& value);

// Reads a JSON config file. Unknown keys are an error so typos surface
// immediately; string values get env interpolation.
RunConfig load_config(const std::string& path);

// Fails fast on contradictory or incomplete settings for the chosen
// backend. Called before any network or fixture activity.
void validate(const RunConfig& cfg);

}  // namespace critloop::config
