#pragma once

#include <stdexcept>
#include <string>

namespace mscal {

// Invalid arguments or preconditions (bad dimensions, out-of-range values).
class DomainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Misaligned multi-source inputs where alignment is required.
class AlignmentError : public DomainError {
public:
  using DomainError::DomainError;
};

// Numerical failure (factorization breakdown, singular systems).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace mscal
