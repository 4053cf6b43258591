#pragma once

#include <stdexcept>
#include <string>

namespace pgar {

// Shared domain guard; rejects NaN as well as out-of-range values.
inline bool in_unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

// Error taxonomy. The CLI maps these onto exit codes:
// configuration/format/domain problems -> 1, training faults -> 2.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Precondition violation on a pure function (argument outside its domain).
struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error(what) {}
};

// A streaming training observation was unusable (non-finite loss, probability
// outside [0,1]).
struct InvalidObservation : Error {
    explicit InvalidObservation(const std::string& what) : Error(what) {}
};

// Invalid configuration: bad field value, unknown key, violated invariant.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// Malformed input file (IDX container, trace CSV).
struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(what) {}
};

// Non-finite values reached the stability auditor; the run is not auditable.
struct AuditError : Error {
    explicit AuditError(const std::string& what) : Error(what) {}
};

// Training diverged (NaN/Inf loss, gradients or parameters). The harness
// flushes the partial trace and records a fault before propagating this.
struct TrainingFault : Error {
    explicit TrainingFault(const std::string& what) : Error(what) {}
};

} // namespace pgar
