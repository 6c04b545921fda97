#pragma once

#include <stdexcept>
#include <string>

namespace fga {

/// Broad failure classes. Each maps onto one process exit code in the CLI.
enum class ErrorKind {
    config,    // exit 1
    data,      // exit 2
    internal,  // exit 3
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Bad magic, bad version, unparseable file.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Payload or blob shorter than its header promises.
class TruncationError : public FormatError {
public:
    explicit TruncationError(const std::string& what) : FormatError(what) {}
};

/// Two inputs that should agree do not (e.g. image and label counts).
class ConsistencyError : public FormatError {
public:
    explicit ConsistencyError(const std::string& what) : FormatError(what) {}
};

/// A model whose layer shapes do not chain.
class ValidationError : public FormatError {
public:
    explicit ValidationError(const std::string& what) : FormatError(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Caller broke a precondition.
class ContractViolation : public Error {
public:
    explicit ContractViolation(const std::string& what) : Error(ErrorKind::internal, what) {}
};

inline void expects(bool cond, const char* what) {
    if (!cond) throw ContractViolation(what);
}

inline void expects(bool cond, const std::string& what) {
    if (!cond) throw ContractViolation(what);
}

}  // namespace fga
