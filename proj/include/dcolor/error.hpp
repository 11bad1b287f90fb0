#pragma once

#include <stdexcept>
#include <string>

namespace dcolor {

// Base for every error the library raises. The C API maps the concrete
// subclass onto a status code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// An artifact another command produces (target, checkpoint) is missing.
class PrerequisiteError : public Error {
public:
    using Error::Error;
};

// Non-finite values, diverging losses.
class NumericalError : public Error {
public:
    using Error::Error;
};

// A feature column became constant across the batch (complete collapse).
class CollapseError : public NumericalError {
public:
    CollapseError(const std::string& what, std::size_t column)
        : NumericalError(what), column_(column) {}
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

// Bad magic, truncated payloads, version mismatches in binary files.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace dcolor
