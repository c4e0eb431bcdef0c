#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fineq {

using ScalarField = std::vector<double>;

// ============================================================================
// Errors
// ============================================================================

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: wrong dimensions, parameters outside their domain, invalid configs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A computation that could not produce a trustworthy number.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Compensated summation
// ============================================================================

// Neumaier variant of Kahan summation.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  KahanSum& operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }
inline double negative_part(double x) { return x < 0.0 ? -x : 0.0; }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace fineq
