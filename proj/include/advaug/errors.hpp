#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace advaug {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network structure does not match the parameters or input it is given.
class StructuralError : public Error {
 public:
  StructuralError(int layer_index, const std::string& what)
      : Error("layer " + std::to_string(layer_index) + ": " + what), layer_index_(layer_index) {}
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  CheckpointError(std::string section, const std::string& what)
      : Error("checkpoint section '" + section + "': " + what), section_(std::move(section)) {}
  const std::string& section() const { return section_; }

 private:
  std::string section_;
};

// Raised by the trainer when a loss term becomes NaN or infinite.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::int64_t iteration, std::string term)
      : Error("non-finite loss at iteration " + std::to_string(iteration) + " in term '" + term + "'"),
        iteration_(iteration),
        term_(std::move(term)) {}
  std::int64_t iteration() const { return iteration_; }
  const std::string& term() const { return term_; }

 private:
  std::int64_t iteration_;
  std::string term_;
};

}  // namespace advaug
