#pragma once

#include <stdexcept>
#include <string>

namespace roadseq {

// Raised for bad inputs: malformed files, broken invariants, invalid configs.
// The CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for runtime/numeric failures (non-finite loss, I/O mid-run).
// The CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace roadseq
