#pragma once

#include <stdexcept>
#include <string>

namespace attclf {

/// Raised when the Frenet denominator 1 - d*kappa falls below the configured tolerance.
class SingularityError : public std::runtime_error {
 public:
  explicit SingularityError(const std::string& what) : std::runtime_error(what) {}
};

/// Input data violates a documented invariant. `field()` names the offending entry.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class QpInfeasibleError : public std::runtime_error {
 public:
  explicit QpInfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

class QpGradientError : public std::runtime_error {
 public:
  explicit QpGradientError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& field, const std::string& what) {
  if (!cond) throw ValidationError(field, what);
}

}  // namespace detail
}  // namespace attclf
