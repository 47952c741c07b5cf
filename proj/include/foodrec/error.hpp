#ifndef FOODREC_ERROR_HPP
#define FOODREC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace foodrec {

enum class Errc {
    invalid_argument,
    shape_mismatch,
    out_of_range,
    empty_input,
    bad_magic,
    truncated,
    shape_inconsistent,
    label_overflow,
    undecodable,
    io_error,
};

/// Exception carrying a machine-checkable error code plus a human message.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace foodrec

#endif
