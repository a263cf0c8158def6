#pragma once

#include <stdexcept>
#include <string>

namespace kbgsat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input files, inconsistent splits, unresolvable names.
class DataError : public Error {
public:
    using Error::Error;
};

/// A line in a triple file that does not have exactly three fields.
class ParseError : public DataError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Precondition violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite losses or gradients.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Checkpoint with wrong magic or unsupported version.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Checkpoint whose payload disagrees with its manifest.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Bad configuration key, value, or command-line usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace kbgsat
