#pragma once

#include <stdexcept>
#include <string>

namespace qscnet {

/// Malformed caller input: wrong shapes, empty signals, bad metadata.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// A configuration that cannot produce a valid network or run.
class InvalidConfig : public std::invalid_argument {
 public:
  explicit InvalidConfig(const std::string& what) : std::invalid_argument(what) {}
};

/// An operation invoked on an object that does not support it
/// (e.g. conditioning a multi-stem model).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Missing, unreadable or corrupt data on disk.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or parameters during optimisation.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qscnet
