#pragma once

#include <stdexcept>
#include <string>

namespace afl {

/// Raised when an argument or configuration value violates a documented
/// precondition. The message names the offending quantity.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a run fails mid-flight: loss of state validity, replay
/// mismatch, file damage, line-search breakdown.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace afl
