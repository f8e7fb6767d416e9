#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace jcar {

/// Bad user input: malformed files, invalid arguments, inconsistent shapes.
/// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: indefinite matrices, non-finite densities, divergence.
/// The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Warnings = std::vector<std::string>;

// Appends to `sink` when given, otherwise prints to stderr.
void emit_warning(Warnings* sink, const std::string& message);

// Labels are restricted so CSV output never needs quoting.
bool is_valid_label(const std::string& label);

}  // namespace jcar
