#include "falsify/backend.hpp"

#include "falsify/error.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"
#include "http_util.hpp"

#include <cmath>
#include <cstdlib>
#include <optional>
#include <thread>

namespace falsify {

std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::Proponent: return "proponent";
        case Role::Opponent: return "opponent";
        case Role::Mediator: return "mediator";
    }
    return "unknown";
}

std::string request_tag(const ChatRequest& req) {
    return req.case_id + "/" + std::string(to_string(req.role)) + "." + req.action + "/" + req.turn;
}

namespace {

std::int64_t word_count(std::string_view s) { return static_cast<std::int64_t>(text::tokenize(s).size()); }

}  // namespace

ScriptedBackend::ScriptedBackend(std::unordered_map<std::string, std::string> fixture)
    : fixture_(std::move(fixture)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
    std::string raw;
    try {
        raw = fsutil::read_file(path);
    } catch (const Error&) {
        throw Error(Errc::FixtureMissing, "fixture file not found: " + path);
    }
    try {
        return from_json(nlohmann::json::parse(raw));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::FixtureMissing, path + " is not valid JSON: " + e.what());
    }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::FixtureMissing, "fixture must be a JSON object");
    std::unordered_map<std::string, std::string> map;
    for (const auto& [key, value] : j.items()) {
        if (key.starts_with("_")) continue;  // comments / metadata
        if (!value.is_string()) throw Error(Errc::FixtureMissing, "fixture value for " + key + " is not a string");
        if (text::split(key, '/').size() != 3)
            throw Error(Errc::FixtureMissing, "fixture key " + key + " is not case_id/role/turn");
        map.emplace(key, value.get<std::string>());
    }
    return std::make_shared<ScriptedBackend>(std::move(map));
}

ChatCompletion ScriptedBackend::complete(const ChatRequest& req) {
    const std::string role(to_string(req.role));
    const std::string ra = role + "." + req.action;
    std::vector<std::string> keys;
    if (req.attempt > 1) keys.push_back(req.case_id + "/" + ra + "/" + req.turn + "#" + std::to_string(req.attempt));
    keys.push_back(req.case_id + "/" + ra + "/" + req.turn);
    keys.push_back(req.case_id + "/" + ra + "/*");
    keys.push_back(req.case_id + "/" + role + "/" + req.turn);
    keys.push_back(req.case_id + "/" + role + "/*");
    keys.push_back("*/" + ra + "/" + req.turn);
    keys.push_back("*/" + ra + "/*");
    for (const auto& k : keys) {
        auto it = fixture_.find(k);
        if (it == fixture_.end()) continue;
        ChatCompletion c;
        c.text = it->second;
        for (const auto& m : req.messages) c.usage.prompt += word_count(m.content);
        c.usage.completion = word_count(c.text);
        return c;
    }
    throw Error(Errc::FixtureKeyMissing, "no fixture entry for " + request_tag(req));
}

InFlightLimiter::InFlightLimiter(std::ptrdiff_t max_in_flight)
    : sem_(std::max<std::ptrdiff_t>(max_in_flight, 1)), capacity_(max_in_flight) {
    require(max_in_flight >= 1 && max_in_flight <= 1024, "max_in_flight outside [1,1024]", Errc::ConfigError);
}

void ChatBackendConfig::validate() const {
    require(!endpoint_url.empty(), "chat backend needs endpoint_url", Errc::ConfigError);
    require(timeout_s > 0, "chat backend timeout must be > 0", Errc::ConfigError);
    require(max_retries >= 0, "max_retries must be >= 0", Errc::ConfigError);
    require(backoff_base_s >= 0, "backoff must be >= 0", Errc::ConfigError);
}

HttpChatBackend::HttpChatBackend(ChatBackendConfig cfg, std::shared_ptr<InFlightLimiter> limiter)
    : cfg_(std::move(cfg)), limiter_(std::move(limiter)) {
    cfg_.validate();
}

nlohmann::json HttpChatBackend::request_body(const ChatRequest& req) const {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", cfg_.model_name}, {"messages", std::move(messages)}, {"temperature", cfg_.temperature}};
}

TokenUsage HttpChatBackend::usage() const {
    std::lock_guard lock(usage_mu_);
    return usage_;
}

ChatCompletion HttpChatBackend::complete(const ChatRequest& req) {
    const auto url = detail::split_url(cfg_.endpoint_url);
    const std::string body = request_body(req).dump();

    httplib::Headers headers{{"X-Request-Tag", request_tag(req)}};
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0')
            headers.emplace("Authorization", std::string("Bearer ") + key);
        else
            log().warn("API key variable {} is not set; sending unauthenticated request", cfg_.api_key_env);
    }

    Errc last = Errc::BackendUnavailable;
    std::string last_msg;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            const double delay = cfg_.backoff_base_s * std::pow(2.0, attempt - 1);
            log().warn("{}: retry {}/{} after {}: {}", request_tag(req), attempt, cfg_.max_retries, to_string(last),
                       last_msg);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }

        httplib::Result res;
        {
            std::optional<InFlightLimiter::Slot> slot;
            if (limiter_) slot.emplace(*limiter_);
            auto client = detail::make_client(url.origin, cfg_.timeout_s);
            ++requests_;
            res = client->Post(url.path, headers, body, "application/json");
        }

        if (!res) {
            const auto err = res.error();
            last = (err == httplib::Error::Read || err == httplib::Error::Write ||
                    err == httplib::Error::ConnectionTimeout)
                       ? Errc::Timeout
                       : Errc::BackendUnavailable;
            last_msg = httplib::to_string(err);
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw Error(Errc::AuthError, "endpoint rejected credentials (" + std::to_string(res->status) + ")");
        if (res->status == 429) {
            last = Errc::RateLimited;
            last_msg = "HTTP 429";
            continue;
        }
        if (res->status >= 500) {
            last = Errc::BackendUnavailable;
            last_msg = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw Error(Errc::BackendUnavailable, "HTTP " + std::to_string(res->status) + ": " + res->body);

        try {
            const auto j = nlohmann::json::parse(res->body);
            ChatCompletion out;
            out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                const auto& u = j.at("usage");
                out.usage.prompt = u.value("prompt_tokens", std::int64_t{0});
                out.usage.completion = u.value("completion_tokens", std::int64_t{0});
            }
            std::lock_guard lock(usage_mu_);
            usage_ += out.usage;
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::ParseFailure, std::string("malformed chat response: ") + e.what());
        }
    }
    throw Error(last, request_tag(req) + " failed after " + std::to_string(cfg_.max_retries + 1) +
                          " attempts: " + last_msg);
}

}  // namespace falsify
