#pragma once

#include <stdexcept>
#include <string>

namespace otcf {

inline constexpr const char* kVersion = "0.1.0";

/// Thrown when a computation fails numerically (as opposed to a
/// precondition violation, which throws std::invalid_argument).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace otcf
