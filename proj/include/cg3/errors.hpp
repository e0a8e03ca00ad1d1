#pragma once

#include <stdexcept>
#include <string>

namespace cg3 {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside an operation's mathematical domain (e.g. log of a non-positive entry).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Structurally invalid data: asymmetric adjacency, overlapping splits, unknown labels.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() on a non-scalar node.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite values during optimization.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Failure reading a dataset bundle from disk.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Infeasible generator parameters.
struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace cg3
