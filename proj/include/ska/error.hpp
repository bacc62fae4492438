#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ska {

enum class ErrorCode {
    InvalidArgument,
    InvalidRange,
    DimMismatch,
    RankDeficient,
    NotSPD,
    ZeroVector,
    ZeroDiagonal,
    ZeroColumn,
    DegenerateLabels,
    IndexOutOfRange,
    NonFiniteGradient,
    OracleFailure,
    NoProgress,
    Config,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. Every failure path raises this with a code so
/// callers can branch on the condition instead of parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ska
