#pragma once

#include <stdexcept>
#include <string>

namespace firefly {

// Malformed structure: mismatched dimensions, unknown parameter groups,
// tapes replayed against the wrong store.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A computation produced NaN or infinity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition (budgets, step sizes).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace firefly
