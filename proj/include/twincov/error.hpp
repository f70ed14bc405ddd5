#pragma once

#include <stdexcept>
#include <string>

namespace twincov {

enum class ErrorCode {
    InvalidArgument,
    InvalidBandwidth,
    DimensionMismatch,
    Io,
    Parse,
    Unidentifiable,
    Numerical,
};

/// Single exception type for the core library; the C API maps `code()` onto
/// its status enum.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace twincov
