#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace unicon {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite simulator state.
class SimulationDiverged : public Error {
public:
    using Error::Error;
};

}  // namespace unicon
