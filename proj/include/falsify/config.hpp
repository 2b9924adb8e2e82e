#pragma once

// Run configuration file (JSON). Nested objects and dotted keys are
// equivalent: {"encoder": {"mode": "stub"}} == {"encoder.mode": "stub"}.

#include "falsify/orchestrator.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace falsify {

struct RoleBackendSettings {
    std::string backend = "scripted";  // scripted | http
    std::string fixture;               // scripted
    std::string endpoint_url;          // http
    std::string model;
    std::string api_key_env;
    double timeout_s = 60.0;
    int max_retries = 3;
    double temperature = 0.0;
};

struct EncoderSettings {
    std::string mode = "stub";  // stub | remote
    std::string url;
    std::size_t dim = 64;
    std::uint64_t seed = 0x5eed;
    double timeout_s = 30.0;
};

struct AppConfig {
    DebateConfig debate;
    RoleBackendSettings proponent;
    RoleBackendSettings opponent;
    RoleBackendSettings mediator;
    EncoderSettings encoder;
    std::string lexicon_path;
    std::size_t max_in_flight = 4;
    std::string knowledge;

    void validate() const;
};

/// Flattens nested objects into dotted keys.
nlohmann::json flatten_config(const nlohmann::json& j);

/// Unknown keys and wrong types raise ConfigError naming the key. Relative
/// paths resolve against base_dir.
AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

AppConfig load_config(const std::string& path);

DebateResources build_resources(const AppConfig& cfg);

}  // namespace falsify
