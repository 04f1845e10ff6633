#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace plab {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A tensor op produced a NaN/Inf (maps to CLI exit code 4).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

// Malformed binary input (CILB / PTW1 / CKP1); carries the byte offset
// at which parsing stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t byte_offset)
        : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::uint64_t offset;
};

// Config file rejection; carries the 1-based line number.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line_number)
        : Error("config line " + std::to_string(line_number) + ": " + what),
          line(line_number) {}
    int line;
};

}  // namespace plab
