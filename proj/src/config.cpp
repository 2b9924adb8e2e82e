#include "falsify/config.hpp"

#include "falsify/error.hpp"
#include "falsify/text.hpp"

#include <fmt/format.h>

#include <functional>
#include <map>

namespace falsify {

namespace {

void flatten_into(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
    for (const auto& [k, v] : j.items()) {
        const auto key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object())
            flatten_into(v, key, out);
        else if (out.contains(key))
            throw Error(Errc::ConfigError, "config key " + key + " given twice");
        else
            out[key] = v;
    }
}

template <class T>
T get_as(const nlohmann::json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw Error(Errc::ConfigError, "");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw Error(Errc::ConfigError, "");
            if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0) throw Error(Errc::ConfigError, "");
        } else {
            if (!v.is_number()) throw Error(Errc::ConfigError, "");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw Error(Errc::ConfigError, fmt::format("config key {} has the wrong type ({})", key, v.dump()));
    }
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty() || base.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

std::shared_ptr<ChatBackend> make_backend(const RoleBackendSettings& s,
                                          std::map<std::string, std::shared_ptr<ChatBackend>>& scripted,
                                          const std::shared_ptr<InFlightLimiter>& limiter) {
    if (s.backend == "scripted") {
        auto& slot = scripted[s.fixture];
        if (!slot) slot = ScriptedBackend::from_file(s.fixture);
        return slot;
    }
    ChatBackendConfig c;
    c.endpoint_url = s.endpoint_url;
    c.model_name = s.model;
    c.api_key_env = s.api_key_env;
    c.timeout_s = s.timeout_s;
    c.max_retries = s.max_retries;
    c.temperature = s.temperature;
    return std::make_shared<HttpChatBackend>(c, limiter);
}

}  // namespace

nlohmann::json flatten_config(const nlohmann::json& j) {
    require(j.is_object(), "config must be a JSON object", Errc::ConfigError);
    nlohmann::json out = nlohmann::json::object();
    flatten_into(j, "", out);
    return out;
}

void AppConfig::validate() const {
    debate.validate();
    for (const auto* r : {&proponent, &opponent, &mediator}) {
        const auto role = r == &proponent ? "proponent" : r == &opponent ? "opponent" : "mediator";
        if (r->backend == "scripted") {
            require(!r->fixture.empty(), fmt::format("{}.fixture is required for a scripted backend", role),
                    Errc::ConfigError);
        } else if (r->backend == "http") {
            require(!r->endpoint_url.empty(), fmt::format("{}.endpoint_url is required", role), Errc::ConfigError);
            require(!r->model.empty(), fmt::format("{}.model is required", role), Errc::ConfigError);
            require(r->timeout_s > 0.0, fmt::format("{}.timeout_s must be > 0", role), Errc::ConfigError);
            require(r->max_retries >= 0, fmt::format("{}.max_retries must be >= 0", role), Errc::ConfigError);
        } else {
            throw Error(Errc::ConfigError, fmt::format("{}.backend must be scripted or http, got {}", role, r->backend));
        }
    }
    if (encoder.mode == "stub") {
        require(encoder.dim >= 2, "encoder.dim must be >= 2", Errc::ConfigError);
    } else if (encoder.mode == "remote") {
        require(!encoder.url.empty(), "encoder.url is required in remote mode", Errc::ConfigError);
    } else {
        throw Error(Errc::ConfigError, "encoder.mode must be stub or remote, got " + encoder.mode);
    }
    require(max_in_flight >= 1, "concurrency.max_in_flight must be >= 1", Errc::ConfigError);
}

AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    AppConfig c;
    using Setter = std::function<void(const nlohmann::json&, const std::string&)>;
    std::map<std::string, Setter> setters{
        {"t_max", [&](auto& v, auto& k) { c.debate.t_max = get_as<int>(v, k); }},
        {"theta_attack", [&](auto& v, auto& k) { c.debate.theta_attack = get_as<double>(v, k); }},
        {"theta_sim", [&](auto& v, auto& k) { c.debate.theta_sim = get_as<double>(v, k); }},
        {"tau", [&](auto& v, auto& k) { c.debate.tau = get_as<double>(v, k); }},
        {"top_k", [&](auto& v, auto& k) { c.debate.top_k = get_as<std::size_t>(v, k); }},
        {"encoder.mode", [&](auto& v, auto& k) { c.encoder.mode = get_as<std::string>(v, k); }},
        {"encoder.url", [&](auto& v, auto& k) { c.encoder.url = get_as<std::string>(v, k); }},
        {"encoder.dim", [&](auto& v, auto& k) { c.encoder.dim = get_as<std::size_t>(v, k); }},
        {"encoder.seed", [&](auto& v, auto& k) { c.encoder.seed = get_as<std::uint64_t>(v, k); }},
        {"encoder.timeout_s", [&](auto& v, auto& k) { c.encoder.timeout_s = get_as<double>(v, k); }},
        {"eval.lexicon_path",
         [&](auto& v, auto& k) { c.lexicon_path = resolve(base_dir, get_as<std::string>(v, k)); }},
        {"concurrency.max_in_flight", [&](auto& v, auto& k) { c.max_in_flight = get_as<std::size_t>(v, k); }},
        {"knowledge", [&](auto& v, auto& k) { c.knowledge = get_as<std::string>(v, k); }},
    };
    for (auto* role : {&c.proponent, &c.opponent, &c.mediator}) {
        const std::string p = role == &c.proponent ? "proponent" : role == &c.opponent ? "opponent" : "mediator";
        setters[p + ".backend"] = [role](auto& v, auto& k) { role->backend = get_as<std::string>(v, k); };
        setters[p + ".fixture"] = [role, &base_dir](auto& v, auto& k) {
            role->fixture = resolve(base_dir, get_as<std::string>(v, k));
        };
        setters[p + ".endpoint_url"] = [role](auto& v, auto& k) { role->endpoint_url = get_as<std::string>(v, k); };
        setters[p + ".model"] = [role](auto& v, auto& k) { role->model = get_as<std::string>(v, k); };
        setters[p + ".api_key_env"] = [role](auto& v, auto& k) { role->api_key_env = get_as<std::string>(v, k); };
        setters[p + ".timeout_s"] = [role](auto& v, auto& k) { role->timeout_s = get_as<double>(v, k); };
        setters[p + ".max_retries"] = [role](auto& v, auto& k) { role->max_retries = get_as<int>(v, k); };
        setters[p + ".temperature"] = [role](auto& v, auto& k) { role->temperature = get_as<double>(v, k); };
    }

    const auto flat = flatten_config(j);
    for (const auto& [key, value] : flat.items()) {
        if (key.ends_with(".api_key") || key == "api_key")
            throw Error(Errc::ConfigError, "config key " + key + ": API keys are read from environment variables only");
        auto it = setters.find(key);
        if (it == setters.end()) throw Error(Errc::ConfigError, "unknown config key " + key);
        it->second(value, key);
    }
    return c;
}

AppConfig load_config(const std::string& path) {
    std::string raw;
    try {
        raw = fsutil::read_file(path);
    } catch (const Error&) {
        throw Error(Errc::ConfigError, "config file not found: " + path);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ConfigError, path + ": " + e.what());
    }
    return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

DebateResources build_resources(const AppConfig& cfg) {
    cfg.validate();
    DebateResources r;
    auto limiter = std::make_shared<InFlightLimiter>(static_cast<std::ptrdiff_t>(cfg.max_in_flight));
    std::map<std::string, std::shared_ptr<ChatBackend>> scripted;
    r.backends.proponent = make_backend(cfg.proponent, scripted, limiter);
    r.backends.opponent = make_backend(cfg.opponent, scripted, limiter);
    r.backends.mediator = make_backend(cfg.mediator, scripted, limiter);
    if (cfg.encoder.mode == "stub")
        r.embedder = std::make_shared<StubEncoder>(cfg.encoder.dim, cfg.encoder.seed);
    else
        r.embedder = std::make_shared<RemoteEncoder>(cfg.encoder.url, cfg.encoder.timeout_s);
    r.knowledge = cfg.knowledge;
    return r;
}

}  // namespace falsify
