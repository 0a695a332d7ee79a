#pragma once

#include <stdexcept>
#include <string>

namespace rawdiff {

// Failure categories; the C API and the CLI map these onto status/exit codes.
enum class ErrorKind {
    Usage,    // bad arguments, invalid configuration
    Data,     // unreadable, malformed or inconsistent input data
    Numeric,  // non-finite values, divergence
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Usage:
        return "usage";
    case ErrorKind::Data:
        return "data";
    case ErrorKind::Numeric:
        return "numeric";
    }
    return "unknown";
}

} // namespace rawdiff
