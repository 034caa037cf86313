#include "dyfn/error.hpp"

namespace dyfn {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::MalformedHeader: return "malformed-header";
    case ErrorKind::TruncatedPayload: return "truncated-payload";
    case ErrorKind::SizeMismatch: return "size-mismatch";
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::DegenerateFit: return "degenerate-fit";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::DegenerateGeometry: return "degenerate-geometry";
    case ErrorKind::NoConsensus: return "no-consensus";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace dyfn
