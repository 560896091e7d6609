#pragma once

#include <stdexcept>
#include <string>

namespace gaproto {

enum class ErrorKind {
    invalid_argument,  // bad configuration or precondition violation
    out_of_range,      // index outside a valid range
    io,                // file could not be opened, read or written
    format,            // malformed file, or data/model shape mismatch
    numeric,           // non-finite value or failed numerical check
    internal,          // a self-consistency check failed
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, const std::string& what) {
    if (!condition) fail(ErrorKind::invalid_argument, what);
}

}  // namespace gaproto
