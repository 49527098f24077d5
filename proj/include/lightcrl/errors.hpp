#pragma once

#include <stdexcept>
#include <string>

namespace lightcrl {

/// Shape or dimension disagreement between operands. The message names both shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Input outside an operation's documented domain (e.g. log of a non-positive value).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A caller broke an API precondition (non-scalar loss, k > n, tau <= 0, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Numerically degenerate input where the operation has no sensible result
/// (e.g. normalizing a near-zero vector).
struct DegenerateInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A file is not in the expected format (bad magic, unknown version, bad tag byte).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A file is in the expected format but damaged (truncated payload, CRC mismatch).
struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Well-formed input carrying invalid data (NaN/Inf entries, missing labels, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Plain I/O failure (cannot open/read/write).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace lightcrl
