#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "critloop/backend.hpp"

namespace testsupport {

namespace backend = critloop::backend;

inline std::string fixture_path(const std::string& name) {
    return std::string(FIXTURES_DIR) + "/" + name;
}

// Unique scratch file under the build tree's working directory, removed on
// destruction.
class TempFile {
   public:
    explicit TempFile(const std::string& stem) {
        static std::atomic<int> counter{0};
        path_ = "tmp_" + stem + "_" + std::to_string(counter.fetch_add(1)) + "_" +
                std::to_string(static_cast<unsigned>(::getpid()));
    }
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    const std::string& path() const { return path_; }

    void write(const std::string& content) {
        std::ofstream out(path_, std::ios::binary | std::ios::trunc);
        out << content;
    }

    std::string read() const {
        std::ifstream in(path_, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

   private:
    std::string path_;
};

inline backend::Completion completion_of(std::string text, std::int64_t completion_tokens = 0,
                                         backend::FinishReason reason =
                                             backend::FinishReason::Stop) {
    backend::Completion c;
    c.text = std::move(text);
    c.usage.completion_tokens =
        completion_tokens > 0 ? completion_tokens : backend::estimate_tokens(c.text);
    c.finish_reason = reason;
    return c;
}

inline backend::Fixture sequential_fixture(std::vector<backend::Completion> completions) {
    backend::Fixture fx;
    fx.policy = backend::Fixture::Policy::Sequential;
    for (auto& c : completions) {
        backend::FixtureEntry e;
        e.completion = std::move(c);
        e.has_usage = true;
        fx.entries.push_back(std::move(e));
    }
    return fx;
}

// Wraps another backend and keeps every request it saw.
class RecordingBackend : public backend::Backend {
   public:
    explicit RecordingBackend(backend::Backend& inner) : inner_(inner) {}

    backend::Completion generate(const backend::GenerationRequest& req) override {
        {
            std::lock_guard<std::mutex> lk(mu_);
            requests_.push_back(req);
        }
        return inner_.generate(req);
    }

    std::vector<backend::GenerationRequest> requests() const {
        std::lock_guard<std::mutex> lk(mu_);
        return requests_;
    }

   private:
    backend::Backend& inner_;
    mutable std::mutex mu_;
    std::vector<backend::GenerationRequest> requests_;
};

// Counts calls without recording content; cheap concurrency probe.
class CountingBackend : public backend::Backend {
   public:
    explicit CountingBackend(backend::Backend& inner) : inner_(inner) {}

    backend::Completion generate(const backend::GenerationRequest& req) override {
        ++calls_;
        return inner_.generate(req);
    }

    int calls() const { return calls_.load(); }

   private:
    backend::Backend& inner_;
    std::atomic<int> calls_{0};
};

// Sleeps per call and tracks the peak number of simultaneous callers.
class SlowBackend : public backend::Backend {
   public:
    SlowBackend(backend::Backend& inner, int sleep_ms) : inner_(inner), sleep_ms_(sleep_ms) {}

    backend::Completion generate(const backend::GenerationRequest& req) override {
        int now = concurrent_.fetch_add(1) + 1;
        int prev = peak_.load();
        while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms_));
        auto result = inner_.generate(req);
        concurrent_.fetch_sub(1);
        return result;
    }

    int peak_concurrency() const { return peak_.load(); }

   private:
    backend::Backend& inner_;
    int sleep_ms_;
    std::atomic<int> concurrent_{0};
    std::atomic<int> peak_{0};
};

// Always throws; for exercising error paths.
class FailingBackend : public backend::Backend {
   public:
    explicit FailingBackend(backend::ErrorKind kind = backend::ErrorKind::Transport)
        : kind_(kind) {}

    backend::Completion generate(const backend::GenerationRequest&) override {
        throw backend::BackendError(kind_, "scripted failure");
    }

   private:
    backend::ErrorKind kind_;
};

}  // namespace testsupport
