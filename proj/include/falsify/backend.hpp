#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace falsify {

enum class Role { Proponent, Opponent, Mediator };

std::string_view to_string(Role r) noexcept;

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

struct TokenUsage {
    std::int64_t prompt = 0;
    std::int64_t completion = 0;

    [[nodiscard]] std::int64_t total() const noexcept { return prompt + completion; }
    TokenUsage& operator+=(const TokenUsage& o) noexcept {
        prompt += o.prompt;
        completion += o.completion;
        return *this;
    }
};

struct ChatRequest {
    std::string case_id;
    Role role = Role::Proponent;
    std::string action;  // generate, revise, probe, argue, evaluate, adjudicate
    std::string turn;    // iteration number, or "final"
    int attempt = 1;     // > 1 on reprompts
    std::vector<ChatMessage> messages;
};

/// "case_id/role.action/turn", the key scripted fixtures are looked up by.
std::string request_tag(const ChatRequest& req);

struct ChatCompletion {
    std::string text;
    TokenUsage usage;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatCompletion complete(const ChatRequest& req) = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

/// Offline backend replaying completions from a fixture map keyed
/// "case_id/role/turn". The role segment may carry an action suffix
/// ("opponent.probe") and either the case or turn segment may be "*".
/// Lookup order, most specific first:
///   case/role.action/turn#attempt, case/role.action/turn, case/role.action/*,
///   case/role/turn, case/role/*, */role.action/turn, */role.action/*
class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(std::unordered_map<std::string, std::string> fixture);

    static std::shared_ptr<ScriptedBackend> from_file(const std::string& path);
    static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& j);

    ChatCompletion complete(const ChatRequest& req) override;
    [[nodiscard]] std::string name() const override { return "scripted"; }
    [[nodiscard]] std::size_t size() const noexcept { return fixture_.size(); }

private:
    std::unordered_map<std::string, std::string> fixture_;
};

/// Caps the number of concurrent requests across every backend sharing it.
class InFlightLimiter {
public:
    explicit InFlightLimiter(std::ptrdiff_t max_in_flight);

    class Slot {
    public:
        explicit Slot(InFlightLimiter& l) : limiter_(l) { limiter_.sem_.acquire(); }
        ~Slot() { limiter_.sem_.release(); }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

    private:
        InFlightLimiter& limiter_;
    };

    [[nodiscard]] Slot acquire() { return Slot(*this); }
    [[nodiscard]] std::ptrdiff_t capacity() const noexcept { return capacity_; }

private:
    std::counting_semaphore<1024> sem_;
    std::ptrdiff_t capacity_;
};

struct ChatBackendConfig {
    std::string endpoint_url;  // full chat-completions URL
    std::string model_name;
    std::string api_key_env;  // name of the variable holding the key; may be empty
    double timeout_s = 60.0;
    int max_retries = 3;
    double temperature = 0.0;
    double backoff_base_s = 0.5;

    void validate() const;
};

/// OpenAI-compatible chat-completions client with bounded exponential backoff.
class HttpChatBackend final : public ChatBackend {
public:
    HttpChatBackend(ChatBackendConfig cfg, std::shared_ptr<InFlightLimiter> limiter = nullptr);

    ChatCompletion complete(const ChatRequest& req) override;
    [[nodiscard]] std::string name() const override { return "chat:" + cfg_.model_name; }

    [[nodiscard]] TokenUsage usage() const;
    [[nodiscard]] std::size_t requests_sent() const noexcept { return requests_.load(); }

    /// Request body sent for req; exposed for template-fidelity checks.
    [[nodiscard]] nlohmann::json request_body(const ChatRequest& req) const;

private:
    ChatBackendConfig cfg_;
    std::shared_ptr<InFlightLimiter> limiter_;
    mutable std::mutex usage_mu_;
    TokenUsage usage_;
    std::atomic<std::size_t> requests_{0};
};

}  // namespace falsify
