#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace falsify {

enum class Errc {
    // consensus graph
    UnknownNode,
    NotALeaf,
    ZeroWeight,
    Unreachable,
    DuplicateNode,
    CycleDetected,
    // vfm
    DimensionMismatch,
    ZeroNormVector,
    NonPositiveTemperature,
    KOutOfRange,
    EmptyRegion,
    // agents / backends
    ParseFailure,
    BackendUnavailable,
    AuthError,
    RateLimited,
    Timeout,
    FixtureMissing,
    FixtureKeyMissing,
    // eval
    FileMissing,
    SchemaError,
    Misalignment,
    MissingGtFindings,
    // misc
    EmbeddingError,
    ConfigError,
    Precondition,
    Io,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline void require(bool cond, const std::string& what, Errc code = Errc::Precondition) {
    if (!cond) throw Error(code, what);
}

}  // namespace falsify
