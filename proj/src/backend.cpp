#include "critloop/backend.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace critloop::backend {

using nlohmann::json;

const char* role_name(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_name(std::string_view name) {
    if (name == "system") return Role::System;
    if (name == "assistant") return Role::Assistant;
    if (name == "user") return Role::User;
    throw std::invalid_argument("unknown role: " + std::string(name));
}

const char* finish_reason_name(FinishReason r) {
    switch (r) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason finish_reason_from_name(std::string_view name) {
    if (name == "stop") return FinishReason::Stop;
    if (name == "length") return FinishReason::Length;
    return FinishReason::Error;
}

namespace {

// FNV-1a, 64 bit. Stability across runs and platforms matters here; speed
// and collision resistance do not.
struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;

    void feed(std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    }
    void feed_byte(unsigned char c) {
        h ^= c;
        h *= 1099511628211ull;
    }
};

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string fingerprint(const GenerationRequest& req) {
    Fnv1a f;
    for (const auto& m : req.messages) {
        f.feed(role_name(m.role));
        f.feed_byte(0x1f);
        f.feed(m.content);
        f.feed_byte(0x1e);
    }
    f.feed(format_double(req.sampling.temperature));
    f.feed_byte(0x1f);
    f.feed(format_double(req.sampling.top_p));
    f.feed_byte(0x1f);
    f.feed(std::to_string(req.sampling.max_tokens));
    f.feed_byte(0x1f);
    f.feed(req.seed ? std::to_string(*req.seed) : "-");
    f.feed_byte(0x1f);
    f.feed(req.model_id);

    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = hex[f.h & 0xf];
        f.h >>= 4;
    }
    return out;
}

std::int64_t estimate_tokens(std::string_view text) {
    std::int64_t count = 0;
    bool in_word = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_word) ++count;
        in_word = !ws;
    }
    return count;
}

Fixture Fixture::from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BackendError(ErrorKind::Malformed, "cannot open fixture: " + path);
    Fixture fx;
    bool any_fp = false;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw BackendError(ErrorKind::Malformed,
                               path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("response") || !j["response"].is_object())
            throw BackendError(ErrorKind::Malformed,
                               path + ":" + std::to_string(lineno) + ": missing response object");
        const json& r = j["response"];
        FixtureEntry e;
        if (j.contains("fingerprint") && !j["fingerprint"].is_null()) {
            e.fingerprint = j["fingerprint"].get<std::string>();
            any_fp = true;
        }
        e.completion.text = r.value("text", std::string());
        if (r.contains("prompt_tokens") || r.contains("completion_tokens")) {
            e.has_usage = true;
            e.completion.usage.prompt_tokens = r.value("prompt_tokens", std::int64_t{0});
            e.completion.usage.completion_tokens = r.value("completion_tokens", std::int64_t{0});
        } else {
            e.completion.usage.completion_tokens = estimate_tokens(e.completion.text);
        }
        e.completion.finish_reason = finish_reason_from_name(r.value("finish_reason", "stop"));
        fx.entries.push_back(std::move(e));
    }
    fx.policy = any_fp ? Policy::ByFingerprint : Policy::Sequential;
    return fx;
}

ScriptedBackend::ScriptedBackend(Fixture fixture) : fixture_(std::move(fixture)) {
    if (fixture_.policy == Fixture::Policy::ByFingerprint) {
        for (size_t i = 0; i < fixture_.entries.size(); ++i) {
            const auto& fp = fixture_.entries[i].fingerprint;
            if (!fp)
                throw BackendError(ErrorKind::Malformed,
                                   "fingerprint fixture has an unkeyed entry at index " +
                                       std::to_string(i));
            by_fingerprint_.emplace(*fp, i);
        }
    }
}

Completion ScriptedBackend::generate(const GenerationRequest& req) {
    std::lock_guard<std::mutex> lk(mu_);
    if (fixture_.policy == Fixture::Policy::Sequential) {
        if (cursor_ >= fixture_.entries.size())
            throw BackendError(ErrorKind::Unmatched,
                               "fixture exhausted after " + std::to_string(cursor_) + " entries");
        return fixture_.entries[cursor_++].completion;
    }
    auto it = by_fingerprint_.find(fingerprint(req));
    if (it == by_fingerprint_.end())
        throw BackendError(ErrorKind::Unmatched,
                           "no fixture entry for fingerprint " + fingerprint(req));
    return fixture_.entries[it->second].completion;
}

size_t ScriptedBackend::entries_consumed() const {
    std::lock_guard<std::mutex> lk(mu_);
    return cursor_;
}

struct LiveBackend::Impl {
    std::string origin;
    std::string path_prefix;
    std::string api_key;
    RetryPolicy retry;
    std::mt19937_64 rng;
    std::mutex rng_mu;

    Impl(std::string base_url, std::string key, RetryPolicy r)
        : api_key(std::move(key)), retry(r), rng(r.seed) {
        // Split scheme://host[:port]/prefix into origin and prefix; httplib
        // clients bind to an origin and take the path per request.
        auto scheme_end = base_url.find("://");
        size_t path_start = scheme_end == std::string::npos
                                ? base_url.find('/')
                                : base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            origin = base_url;
        } else {
            origin = base_url.substr(0, path_start);
            path_prefix = base_url.substr(path_start);
        }
        while (!path_prefix.empty() && path_prefix.back() == '/') path_prefix.pop_back();
    }

    int next_delay_ms(int attempt) {
        double base = retry.initial_delay_ms;
        for (int i = 0; i < attempt; ++i) base *= retry.backoff_factor;
        double lo = base * (1.0 - retry.jitter);
        double hi = base * (1.0 + retry.jitter);
        std::lock_guard<std::mutex> lk(rng_mu);
        std::uniform_real_distribution<double> dist(lo, hi);
        return static_cast<int>(dist(rng));
    }
};

LiveBackend::LiveBackend(std::string base_url, std::string api_key, RetryPolicy retry)
    : impl_(std::make_unique<Impl>(std::move(base_url), std::move(api_key), retry)) {}

LiveBackend::~LiveBackend() = default;

LiveBackend LiveBackend::from_env(RetryPolicy retry) {
    const char* base = std::getenv("DC_BASE_URL");
    if (!base || !*base)
        throw BackendError(ErrorKind::Transport, "DC_BASE_URL is not set");
    const char* key = std::getenv("DC_API_KEY");
    return LiveBackend(base, key ? key : "", retry);
}

Completion LiveBackend::generate(const GenerationRequest& req) {
    json body;
    body["model"] = req.model_id.empty() ? "default" : req.model_id;
    body["temperature"] = req.sampling.temperature;
    body["top_p"] = req.sampling.top_p;
    body["max_tokens"] = req.sampling.max_tokens;
    if (req.seed) body["seed"] = *req.seed;
    body["messages"] = json::array();
    for (const auto& m : req.messages)
        body["messages"].push_back({{"role", role_name(m.role)}, {"content", m.content}});
    const std::string payload = body.dump();
    const std::string path = impl_->path_prefix + "/v1/chat/completions";

    std::string last_error;
    for (int attempt = 0; attempt < impl_->retry.max_attempts; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(impl_->next_delay_ms(attempt - 1)));

        httplib::Client cli(impl_->origin);
        cli.set_connection_timeout(30);
        cli.set_read_timeout(600);
        httplib::Headers headers;
        if (!impl_->api_key.empty())
            headers.emplace("Authorization", "Bearer " + impl_->api_key);
        auto res = cli.Post(path, headers, payload, "application/json");

        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "http " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw BackendError(ErrorKind::Transport,
                               "http " + std::to_string(res->status) + ": " + res->body);

        json j;
        try {
            j = json::parse(res->body);
        } catch (const json::exception& e) {
            throw BackendError(ErrorKind::Malformed, std::string("bad response json: ") + e.what());
        }
        try {
            const json& choice = j.at("choices").at(0);
            Completion c;
            c.text = choice.at("message").at("content").get<std::string>();
            c.finish_reason =
                finish_reason_from_name(choice.value("finish_reason", "stop"));
            if (j.contains("usage")) {
                c.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
                c.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
            } else {
                c.usage.completion_tokens = estimate_tokens(c.text);
            }
            return c;
        } catch (const json::exception& e) {
            throw BackendError(ErrorKind::Malformed,
                               std::string("response missing fields: ") + e.what());
        }
    }
    throw BackendError(ErrorKind::RateLimited,
                       "retries exhausted (" + std::to_string(impl_->retry.max_attempts) +
                           " attempts): " + last_error);
}

std::vector<BatchItem> generate_batch(Backend& backend,
                                      const std::vector<GenerationRequest>& requests,
                                      int max_in_flight) {
    std::vector<BatchItem> results(requests.size());
    if (requests.empty()) return results;
    if (max_in_flight < 1) max_in_flight = 1;

    if (max_in_flight == 1) {
        for (size_t i = 0; i < requests.size(); ++i) {
            try {
                results[i].completion = backend.generate(requests[i]);
            } catch (const BackendError& e) {
                results[i].error = {e.kind(), e.what()};
            } catch (const std::exception& e) {
                results[i].error = {ErrorKind::Transport, e.what()};
            }
        }
        return results;
    }

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            try {
                results[i].completion = backend.generate(requests[i]);
            } catch (const BackendError& e) {
                results[i].error = {e.kind(), e.what()};
            } catch (const std::exception& e) {
                results[i].error = {ErrorKind::Transport, e.what()};
            }
        }
    };
    size_t n_workers = std::min(static_cast<size_t>(max_in_flight), requests.size());
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return results;
}

}  // namespace critloop::backend
