#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace heismod {

enum class ErrorKind {
    SyntaxError,
    UnknownIdentifier,
    NonLiteralExponent,
    UnboundVariable,
    InconsistentBinding,
    DivisionNearZero,
    VariableMismatch,
    NonFinite,
    NonLegendrianTangent,
    ZeroVelocity,
    InversionFailure,
    NonConvergent,
    NegativeQ,
    NotHorizontal,
    ZeroOfQ,
    LeftDomain,
    StepFailure,
    ConstantLengthViolated,
    ZeroLeafLength,
    NonAdmissibleAfterRenormalization,
    PreconditionFailed,
    InvalidScenario,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::UnknownIdentifier: return "UnknownIdentifier";
    case ErrorKind::NonLiteralExponent: return "NonLiteralExponent";
    case ErrorKind::UnboundVariable: return "UnboundVariable";
    case ErrorKind::InconsistentBinding: return "InconsistentBinding";
    case ErrorKind::DivisionNearZero: return "DivisionNearZero";
    case ErrorKind::VariableMismatch: return "VariableMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonLegendrianTangent: return "NonLegendrianTangent";
    case ErrorKind::ZeroVelocity: return "ZeroVelocity";
    case ErrorKind::InversionFailure: return "InversionFailure";
    case ErrorKind::NonConvergent: return "NonConvergent";
    case ErrorKind::NegativeQ: return "NegativeQ";
    case ErrorKind::NotHorizontal: return "NotHorizontal";
    case ErrorKind::ZeroOfQ: return "ZeroOfQ";
    case ErrorKind::LeftDomain: return "LeftDomain";
    case ErrorKind::StepFailure: return "StepFailure";
    case ErrorKind::ConstantLengthViolated: return "ConstantLengthViolated";
    case ErrorKind::ZeroLeafLength: return "ZeroLeafLength";
    case ErrorKind::NonAdmissibleAfterRenormalization: return "NonAdmissibleAfterRenormalization";
    case ErrorKind::PreconditionFailed: return "PreconditionFailed";
    case ErrorKind::InvalidScenario: return "InvalidScenario";
    }
    return "Unknown";
}

/// Single exception type for the library; `kind()` tells callers what went wrong.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {
    }

    Error(ErrorKind kind, const std::string& message, std::size_t offset)
        : std::runtime_error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) +
                             ": " + message),
          kind_(kind), offset_(offset)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

    /// Byte offset into the parsed text; only meaningful for parser errors.
    std::size_t offset() const noexcept { return offset_; }

private:
    ErrorKind kind_;
    std::size_t offset_ = 0;
};

} // namespace heismod
