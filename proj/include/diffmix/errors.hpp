#pragma once

#include <stdexcept>
#include <string>

namespace diffmix {

// Invalid or inconsistent configuration (bad bounds, unknown keys,
// dangling references). Messages name the offending field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural mismatch between grids (shape, frame count, mask size).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A condition could not be resolved against a model's template library.
class ConditionError : public std::runtime_error {
public:
    explicit ConditionError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace diffmix
