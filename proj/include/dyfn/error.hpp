#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyfn {

enum class ErrorKind {
  InvalidInput,       // rejected argument / shape mismatch
  MalformedHeader,    // NTF magic/header problems
  TruncatedPayload,   // NTF payload shorter than the header promises
  SizeMismatch,       // NTF payload longer than the header promises
  MissingFile,
  ShapeMismatch,      // sequence frames disagree on H x W
  Validation,         // data violates a documented invariant
  DegenerateFit,      // singular affine system
  InsufficientData,   // not enough valid samples
  DegenerateGeometry, // collinear / coincident point sets
  NoConsensus,        // RANSAC found no model with >= 3 inliers
  Numeric,            // non-finite values in a computation
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dyfn
