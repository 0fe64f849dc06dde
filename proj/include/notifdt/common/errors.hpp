#pragma once

#include <stdexcept>
#include <string>

namespace notifdt {

// Tensor shapes disagree with what an operation declared.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An API was called out of order or with arguments violating its contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or mismatching file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace notifdt
