#pragma once

#include <stdexcept>
#include <string>

namespace pwsavg {

/// Failure categories surfaced by the toolkit. Scenario/input problems map to
/// CLI exit code 2, numerical failures to exit code 1.
enum class Errc {
    unresolved_orthant,
    unknown_model,
    invalid_params,
    step_size_underflow,
    tangential_contact,
    sticking_detected,
    boundary_crossing,
    max_events_exceeded,
    no_convergence,
    singular_jacobian,
    parse_error,
    schema_error,
    io_error,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::unresolved_orthant:   return "UnresolvedOrthant";
        case Errc::unknown_model:        return "UnknownModel";
        case Errc::invalid_params:       return "InvalidParams";
        case Errc::step_size_underflow:  return "StepSizeUnderflow";
        case Errc::tangential_contact:   return "TangentialContact";
        case Errc::sticking_detected:    return "StickingDetected";
        case Errc::boundary_crossing:    return "BoundaryCrossing";
        case Errc::max_events_exceeded:  return "MaxEventsExceeded";
        case Errc::no_convergence:       return "NoConvergence";
        case Errc::singular_jacobian:    return "SingularJacobian";
        case Errc::parse_error:          return "ParseError";
        case Errc::schema_error:         return "SchemaError";
        case Errc::io_error:             return "IoError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// True for errors caused by bad inputs rather than numerics.
inline bool is_scenario_error(Errc c) {
    return c == Errc::unknown_model || c == Errc::invalid_params || c == Errc::parse_error ||
           c == Errc::schema_error || c == Errc::io_error;
}

}  // namespace pwsavg
