#pragma once

#include <stdexcept>
#include <string>

namespace efoent {

// Error taxonomy mirrored by CLI exit codes:
//   0 success, 1 usage, 2 data/format, 3 runtime (budget, divergence).

// Bad invocation: unknown flag combinations, invalid option values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: parse failures, schema violations,
// vocabulary mismatches, queries outside the supported fragment.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configured compute budget was exceeded (enumeration caps, sampler retries).
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; carries the offending step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long long step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  long long step() const { return step_; }

 private:
  long long step_;
};

}  // namespace efoent
