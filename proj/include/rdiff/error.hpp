#pragma once

#include <stdexcept>
#include <string>

namespace rdiff {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or invariant-violating input file.
class LoadError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Raised by planners and IK when no answer exists within the budget.
class PlanningError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdiff
