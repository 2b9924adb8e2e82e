#include "falsify/log.hpp"

#include "falsify/error.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace falsify {

spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> logger = [] {
        auto l = spdlog::stderr_color_mt("falsify");
        l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        return l;
    }();
    return *logger;
}

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::UnknownNode: return "UnknownNode";
        case Errc::NotALeaf: return "NotALeaf";
        case Errc::ZeroWeight: return "ZeroWeight";
        case Errc::Unreachable: return "Unreachable";
        case Errc::DuplicateNode: return "DuplicateNode";
        case Errc::CycleDetected: return "CycleDetected";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::ZeroNormVector: return "ZeroNormVector";
        case Errc::NonPositiveTemperature: return "NonPositiveTemperature";
        case Errc::KOutOfRange: return "KOutOfRange";
        case Errc::EmptyRegion: return "EmptyRegion";
        case Errc::ParseFailure: return "ParseFailure";
        case Errc::BackendUnavailable: return "BackendUnavailable";
        case Errc::AuthError: return "AuthError";
        case Errc::RateLimited: return "RateLimited";
        case Errc::Timeout: return "Timeout";
        case Errc::FixtureMissing: return "FixtureMissing";
        case Errc::FixtureKeyMissing: return "FixtureKeyMissing";
        case Errc::FileMissing: return "FileMissing";
        case Errc::SchemaError: return "SchemaError";
        case Errc::Misalignment: return "Misalignment";
        case Errc::MissingGtFindings: return "MissingGtFindings";
        case Errc::EmbeddingError: return "EmbeddingError";
        case Errc::ConfigError: return "ConfigError";
        case Errc::Precondition: return "Precondition";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace falsify
