#pragma once

#include <stdexcept>
#include <string>

namespace lamformer {

// Incompatible tensor extents. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A softmax row with no finite entry cannot be normalised.
class DegenerateRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or an unexpected non-finite value crossed an operation boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an API precondition that is not about shapes.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data cannot be used: unreadable file, malformed rows, degenerate
// features, series too short for the requested windows.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lamformer
