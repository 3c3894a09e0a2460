#pragma once

#include <stdexcept>
#include <string>

namespace coordsketch {

/// Input violates a protocol precondition (all-zero instance, bad dimensions).
class InvalidInstance : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A protocol tried to run more rounds than it declared.
class BudgetViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two datasets disagree on the value stored under a shared key.
class ConformingViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The consistency guard of a sketch merge fired.
class MergeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sensitivities are undefined for the zero matrix.
class UndefinedSensitivity : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

} // namespace coordsketch
