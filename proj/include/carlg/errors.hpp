#pragma once

#include <stdexcept>
#include <string>

namespace carlg {

// Malformed or inconsistent input data (datasets, templates, configs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace carlg
