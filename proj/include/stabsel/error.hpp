#pragma once

#include <stdexcept>
#include <string>

namespace stabsel {

/// Thrown when an argument violates a documented precondition (bad prior,
/// out-of-range size, infeasible budget, malformed config).
class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a computation cannot produce a finite, well-defined result
/// (non-finite loss, grid too coarse to bracket a sublevel set, ...).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace stabsel
