#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace altflow {

enum class ErrorKind {
    ShapeMismatch,
    DomainError,
    NonFinite,
    EmptyInput,
    DegenerateLabels,
    EmptyWindow,
    InvalidSpec,
    FormatError,
    MissingMask,
    RequiresKnownDensity,
    ConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::EmptyWindow: return "EmptyWindow";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::MissingMask: return "MissingMask";
    case ErrorKind::RequiresKnownDensity: return "RequiresKnownDensity";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

} // namespace altflow
