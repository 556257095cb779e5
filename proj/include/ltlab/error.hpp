#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltlab {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or argument contract violation (caller bug).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// SPD factorization failed; `pivot` is the first non-positive pivot index.
class SingularMatrixError : public Error {
public:
    SingularMatrixError(const std::string& what, std::size_t pivot)
        : Error(what), pivot_(pivot) {}
    std::size_t pivot() const { return pivot_; }

private:
    std::size_t pivot_;
};

/// Malformed file content; `offset` is the byte position of the problem.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Invalid experiment configuration (schema violation, unknown preset, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged (NaN loss) or failed to reach its tolerance.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace ltlab
