#pragma once

#include <stdexcept>
#include <string>

namespace orbitmix {

enum class ErrorCode {
    DimensionMismatch,
    InvalidArgument,
    Sizing,
    Collinear,
    DegenerateSimplex,
    NonIntegral,
    Unsupported,
    Io,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
        case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
        case ErrorCode::Sizing: return "SIZING";
        case ErrorCode::Collinear: return "COLLINEAR";
        case ErrorCode::DegenerateSimplex: return "DEGENERATE_SIMPLEX";
        case ErrorCode::NonIntegral: return "NON_INTEGRAL";
        case ErrorCode::Unsupported: return "UNSUPPORTED";
        case ErrorCode::Io: return "IO";
    }
    return "UNKNOWN";
}

/// Library-wide exception. `code()` lets callers branch without parsing text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace orbitmix
