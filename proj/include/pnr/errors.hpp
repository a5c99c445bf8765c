#pragma once

#include <stdexcept>

namespace pnr {

/// Input file cannot be read or its structure is malformed.
class parse_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array shapes disagree (matrix columns vs. distribution length, ...).
class dimension_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown enum value or inconsistent configuration field.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Computation cannot proceed numerically (singular system, zero mass,
/// undefined statistic, diverged iterate).
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pnr
