#pragma once

#include <stdexcept>
#include <string>

namespace irevla {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or token counts do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Expert data generation could not reach its success quota.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace irevla
