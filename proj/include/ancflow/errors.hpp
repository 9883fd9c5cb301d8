#pragma once

#include <stdexcept>
#include <string>

namespace ancflow {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 1, IoError/ParseError -> 2, NumericError and
//   std::domain_error -> 3.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : IoError {
    explicit ParseError(const std::string& msg) : IoError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ancflow
