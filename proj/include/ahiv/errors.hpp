#pragma once

#include <stdexcept>
#include <string>

namespace ahiv {

// Input or validation problem (bad file, inconsistent records, bad flags).
// The CLI maps this to exit code 2.
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: singular or ill-conditioned system, non-convergence,
// invalid hazard draw. The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ahiv
