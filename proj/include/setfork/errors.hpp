#pragma once
#include <stdexcept>
#include <string>

namespace setfork {

// Configuration / input validation problems. CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures at run time (IO, numerics, capacity). CLI maps these to exit code 1.
struct RunError : std::runtime_error {
    explicit RunError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : RunError {
    explicit IoError(const std::string& msg) : RunError(msg) {}
};

// Sequence does not fit the model context window.
struct ContextOverflowError : RunError {
    explicit ContextOverflowError(const std::string& msg) : RunError(msg) {}
};

// NaN/Inf encountered where finite values are required (divergence signal).
struct NonFiniteError : RunError {
    explicit NonFiniteError(const std::string& msg) : RunError(msg) {}
};

// Enumeration would exceed the configured cap.
struct CapExceededError : RunError {
    explicit CapExceededError(const std::string& msg) : RunError(msg) {}
};

// All style scores tie; the style configuration is degenerate for this trace.
struct UnclassifiableError : RunError {
    explicit UnclassifiableError(const std::string& msg) : RunError(msg) {}
};

// File carries an unsupported schema version.
struct SchemaMismatchError : RunError {
    explicit SchemaMismatchError(const std::string& msg) : RunError(msg) {}
};

}  // namespace setfork
