#pragma once

#include <stdexcept>
#include <string>

namespace uqvol {

enum class ErrorCode {
    SizeMismatch,
    NonFiniteValue,
    DegenerateRange,
    Io,
    InvalidArgument,
    ShapeMismatch,
    FormatMismatch,
    Divergence,
    MissingArtifact,
    DegenerateCamera,
};

const char* to_string(ErrorCode code) noexcept;

// All library failures surface as this exception; `code()` drives CLI exit
// status and HTTP status mapping.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace uqvol
