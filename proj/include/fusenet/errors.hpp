#pragma once

#include <stdexcept>
#include <string>

namespace fusenet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed manifest or plan document.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes between layers or kernel operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Weight reference outside the blob, overlapping, or of the wrong length.
class BlobError : public Error {
 public:
  using Error::Error;
};

// Invalid kernel or memory configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// No tile fits the scratchpad, or an allocation would overflow it.
class PlanInfeasible : public Error {
 public:
  PlanInfeasible(std::string target, const std::string& what)
      : Error(target.empty() ? what : target + ": " + what), target_(std::move(target)) {}

  const std::string& target() const { return target_; }

 private:
  std::string target_;
};

}  // namespace fusenet
