#include "critloop/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

#include "json.hpp"

namespace critloop::config {

using nlohmann::json;

std::string interpolate_env(const std::string& value) {
    std::string out;
    out.reserve(value.size());
    size_t i = 0;
    while (i < value.size()) {
        if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
            size_t name_begin = i + 2;
            size_t j = name_begin;
            while (j < value.size() &&
                   (std::isupper(static_cast<unsigned char>(value[j])) ||
                    std::isdigit(static_cast<unsigned char>(value[j])) || value[j] == '_'))
                ++j;
            if (j > name_begin && j < value.size() && value[j] == '}') {
                std::string name = value.substr(name_begin, j - name_begin);
                const char* v = std::getenv(name.c_str());
                if (v) out += v;
                i = j + 1;
                continue;
            }
        }
        out += value[i++];
    }
    return out;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");

    RunConfig cfg;
    auto str = [&](const char* key, std::string& field) {
        if (!j.contains(key)) return;
        if (!j[key].is_string()) throw ConfigError(std::string(key) + " must be a string");
        field = interpolate_env(j[key].get<std::string>());
    };
    auto num_i = [&](const char* key, int& field) {
        if (!j.contains(key)) return;
        if (!j[key].is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
        field = j[key].get<int>();
    };
    auto num_d = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw ConfigError(std::string(key) + " must be a number");
        field = j[key].get<double>();
    };

    str("backend", cfg.backend_kind);
    str("fixture", cfg.fixture_path);
    str("base_url", cfg.base_url);
    str("api_key", cfg.api_key);
    str("model", cfg.model_id);
    str("problems", cfg.problems_path);
    str("out", cfg.out_path);
    str("traces", cfg.traces_path);
    str("templates", cfg.templates_dir);
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
            throw ConfigError("seed must be an integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    num_i("max_in_flight", cfg.max_in_flight);
    num_i("max_rounds", cfg.max_rounds);
    num_i("samples", cfg.samples);
    num_d("temperature", cfg.temperature);
    num_d("top_p", cfg.top_p);
    num_i("max_tokens", cfg.max_tokens);
    num_d("rel_tol", cfg.rel_tol);
    num_i("filter_samples", cfg.filter_samples);
    num_i("filter_min_incorrect", cfg.filter_min_incorrect);
    num_i("resample_budget", cfg.resample_budget);
    if (j.contains("second_pass")) {
        if (!j["second_pass"].is_boolean()) throw ConfigError("second_pass must be a boolean");
        cfg.second_pass = j["second_pass"].get<bool>();
    }

    static const char* known[] = {
        "backend",     "fixture",       "base_url",       "api_key",
        "model",       "problems",      "out",            "traces",
        "templates",   "seed",          "max_in_flight",  "max_rounds",
        "samples",     "temperature",   "top_p",          "max_tokens",
        "rel_tol",     "filter_samples", "filter_min_incorrect", "resample_budget",
        "second_pass",
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config key: " + it.key());
    }
    return cfg;
}

void validate(const RunConfig& cfg) {
    if (cfg.backend_kind != "scripted" && cfg.backend_kind != "live")
        throw ConfigError("backend must be \"scripted\" or \"live\", got \"" + cfg.backend_kind +
                          "\"");
    if (cfg.backend_kind == "scripted" && cfg.fixture_path.empty())
        throw ConfigError("scripted backend needs a fixture path");
    if (cfg.backend_kind == "live" && cfg.base_url.empty()) {
        const char* env = std::getenv("DC_BASE_URL");
        if (!env || !*env) throw ConfigError("live backend needs base_url or DC_BASE_URL");
    }
    if (cfg.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (cfg.max_rounds < 0) throw ConfigError("max_rounds must be >= 0");
    if (cfg.samples < 0) throw ConfigError("samples must be >= 0");
    if (cfg.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (cfg.top_p <= 0.0 || cfg.top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
    if (cfg.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (cfg.rel_tol < 0.0) throw ConfigError("rel_tol must be >= 0");
    if (cfg.filter_samples < 1) throw ConfigError("filter_samples must be >= 1");
    if (cfg.filter_min_incorrect < 0 || cfg.filter_min_incorrect > cfg.filter_samples)
        throw ConfigError("filter_min_incorrect must be in [0, filter_samples]");
    if (cfg.resample_budget < 0) throw ConfigError("resample_budget must be >= 0");
}

}  // namespace critloop::config
