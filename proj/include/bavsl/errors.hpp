#pragma once

#include <stdexcept>
#include <string>

namespace bavsl {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// A control or state violates a hard constraint (speed bounds, gradient cap).
class ConstraintError : public std::runtime_error {
public:
    explicit ConstraintError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configuration or user input.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bavsl
