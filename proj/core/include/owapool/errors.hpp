#pragma once

#include <stdexcept>
#include <string>

namespace owapool {

// Raised for malformed config files and inconsistent experiment settings.
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an optimization run goes non-finite or otherwise cannot
// continue. The CLI maps this to exit code 3.
struct TrainingAbort : std::runtime_error {
    explicit TrainingAbort(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace owapool
