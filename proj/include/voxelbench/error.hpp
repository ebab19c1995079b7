#pragma once

#include <stdexcept>
#include <string>

namespace voxelbench {

// Bad command-line invocation. CLI maps this to exit code 1.
struct usage_error : std::runtime_error {
  explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, headers, geometry). Exit code 2.
struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace voxelbench
