#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace xcbr {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, inconsistent schemas, invalid configs.
struct ValidationError : Error {
  using Error::Error;
};

// A pipeline stage failed after validation; carries the stage name.
struct StageError : Error {
  StageError(std::string stage_name, const std::string& cause)
      : Error("stage '" + stage_name + "' failed: " + cause),
        stage(std::move(stage_name)) {}
  std::string stage;
};

// Eq.-3 style rescaling is undefined when the weighted feature sum is ~0.
struct UndefinedMultiplierError : Error {
  UndefinedMultiplierError(double denom, const std::string& instance_label)
      : Error("additive rescaling undefined: |sum_j x_j*w_j| = " +
              std::to_string(denom) + " below epsilon" +
              (instance_label.empty() ? "" : " (instance " + instance_label + ")")),
        denominator(denom) {}
  double denominator;
};

}  // namespace xcbr
