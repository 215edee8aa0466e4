#pragma once

#include <stdexcept>
#include <string>

namespace evsearch {

/// Broad failure category. The service maps these onto HTTP status codes and
/// the CLI onto exit codes, so every thrown Error carries one.
enum class ErrorKind {
    invalid_input,  // malformed data, contract violations by the caller
    conflict,       // operation not valid in the current state
    not_found,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_input(const std::string& message) {
    return Error(ErrorKind::invalid_input, message);
}

}  // namespace evsearch
