#include "uqvol/error.hpp"

namespace uqvol {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::SizeMismatch: return "size-mismatch";
    case ErrorCode::NonFiniteValue: return "non-finite-value";
    case ErrorCode::DegenerateRange: return "degenerate-range";
    case ErrorCode::Io: return "io-error";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::FormatMismatch: return "format-mismatch";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::MissingArtifact: return "missing-artifact";
    case ErrorCode::DegenerateCamera: return "degenerate-camera";
    }
    return "unknown";
}

}  // namespace uqvol
