#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace critloop::backend {

enum class Role { System, User, Assistant };

const char* role_name(Role r);
Role role_from_name(std::string_view name);

struct Message {
    Role role = Role::User;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct SamplingParams {
    double temperature = 0.6;
    double top_p = 1.0;
    int max_tokens = 32768;
};

struct GenerationRequest {
    std::vector<Message> messages;
    SamplingParams sampling;
    std::optional<std::uint64_t> seed;
    std::string model_id;
};

// Stable 64-bit digest of a request's semantic content (roles, message
// bytes, sampling, seed, model). Rendered as 16 lowercase hex digits.
// Fixture files key replay entries on this.
std::string fingerprint(const GenerationRequest& req);

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    bool operator==(const TokenUsage&) const = default;

    TokenUsage& operator+=(const TokenUsage& o) {
        prompt_tokens += o.prompt_tokens;
        completion_tokens += o.completion_tokens;
        return *this;
    }
};

enum class FinishReason { Stop, Length, Error };

const char* finish_reason_name(FinishReason r);
FinishReason finish_reason_from_name(std::string_view name);

struct Completion {
    std::string text;
    TokenUsage usage;
    FinishReason finish_reason = FinishReason::Stop;
};

enum class ErrorKind { Transport, RateLimited, Unmatched, Malformed };

class BackendError : public std::runtime_error {
   public:
    BackendError(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

   private:
    ErrorKind kind_;
};

class Backend {
   public:
    virtual ~Backend() = default;
    // Throws BackendError once retries (if any) are exhausted.
    virtual Completion generate(const GenerationRequest& req) = 0;
};

// Replay source for the scripted backend. Sequential fixtures answer
// requests in file order regardless of content; fingerprint fixtures match
// each request by digest and never consume entries, so repeated identical
// requests are fine.
struct FixtureEntry {
    std::optional<std::string> fingerprint;
    Completion completion;
    bool has_usage = false;
};

struct Fixture {
    enum class Policy { Sequential, ByFingerprint };

    Policy policy = Policy::Sequential;
    std::vector<FixtureEntry> entries;

    static Fixture from_jsonl(const std::string& path);
};

// Crude whitespace word count, applied when a fixture entry carries no
// usage numbers. Keeps token reports populated for hand-written fixtures.
std::int64_t estimate_tokens(std::string_view text);

class ScriptedBackend : public Backend {
   public:
    explicit ScriptedBackend(Fixture fixture);

    Completion generate(const GenerationRequest& req) override;

    size_t entries_consumed() const;
    size_t entries_total() const { return fixture_.entries.size(); }

   private:
    Fixture fixture_;
    std::map<std::string, size_t> by_fingerprint_;
    mutable std::mutex mu_;
    size_t cursor_ = 0;
};

struct RetryPolicy {
    int max_attempts = 5;
    int initial_delay_ms = 1000;
    double backoff_factor = 2.0;
    double jitter = 0.25;
    std::uint64_t seed = 0;
};

// Talks to an OpenAI-style chat completions endpoint. base_url comes from
// DC_BASE_URL and may carry a path prefix; the bearer token comes from
// DC_API_KEY. 429 and 5xx responses retry with exponential backoff, other
// 4xx fail immediately.
class LiveBackend : public Backend {
   public:
    LiveBackend(std::string base_url, std::string api_key, RetryPolicy retry = {});
    ~LiveBackend() override;

    static LiveBackend from_env(RetryPolicy retry = {});

    Completion generate(const GenerationRequest& req) override;

   private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct BatchItem {
    std::optional<Completion> completion;
    std::optional<std::pair<ErrorKind, std::string>> error;

    bool ok() const { return completion.has_value(); }
};

// Runs requests through the backend with at most max_in_flight concurrent
// calls. Results line up with requests by index; individual failures land
// in the corresponding BatchItem instead of propagating. max_in_flight == 1
// degenerates to strict in-order execution.
std::vector<BatchItem> generate_batch(Backend& backend,
                                      const std::vector<GenerationRequest>& requests,
                                      int max_in_flight);

}  // namespace critloop::backend
