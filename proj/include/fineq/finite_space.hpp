#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace fineq {

// ============================================================================
// FiniteSpace
// ============================================================================

enum class LogMode { strict, relaxed };

class FiniteSpace {
 public:
  static constexpr double kMinWeight = 1e-300;
  static constexpr double kSumTolerance = 1e-12;

  FiniteSpace(std::vector<std::string> labels, std::vector<double> mu)
      : labels_(std::move(labels)), mu_(std::move(mu)) {
    require(!mu_.empty(), "FiniteSpace: empty state set");
    require(labels_.size() == mu_.size(), "FiniteSpace: labels and weights differ in length");
    KahanSum total;
    for (double w : mu_) {
      require(std::isfinite(w) && w >= kMinWeight, "FiniteSpace: weight not positive normal or not finite");
      total += w;
    }
    require(std::abs(total.value() - 1.0) <= kSumTolerance, "FiniteSpace: weights do not sum to 1");
    std::set<std::string> seen(labels_.begin(), labels_.end());
    require(seen.size() == labels_.size(), "FiniteSpace: labels are not distinct");
  }

  // Builds a space from unnormalized positive weights; labels default to indices.
  static FiniteSpace from_weights(const std::vector<double>& weights, std::vector<std::string> labels = {}) {
    KahanSum z;
    for (double w : weights) {
      require(std::isfinite(w) && w > 0.0, "FiniteSpace: nonpositive weight");
      z += w;
    }
    std::vector<double> mu(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) mu[i] = weights[i] / z.value();
    if (labels.empty()) {
      labels.reserve(weights.size());
      for (std::size_t i = 0; i < weights.size(); ++i) labels.push_back(std::to_string(i));
    }
    return FiniteSpace(std::move(labels), std::move(mu));
  }

  static FiniteSpace uniform(std::size_t n) { return from_weights(std::vector<double>(n, 1.0)); }

  std::size_t size() const { return mu_.size(); }
  const std::vector<double>& mu() const { return mu_; }
  double mu(std::size_t x) const { return mu_[x]; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t x) const { return labels_[x]; }

  void check_field(const ScalarField& f) const {
    if (f.size() != mu_.size()) throw InvalidArgument("dimension mismatch: field length differs from state count");
  }

 private:
  std::vector<std::string> labels_;
  std::vector<double> mu_;
};

// ============================================================================
// Scalar functionals
// ============================================================================

inline double mean(const FiniteSpace& space, const ScalarField& f) {
  space.check_field(f);
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) s += f[x] * space.mu(x);
  return s.value();
}

inline double covariance(const FiniteSpace& space, const ScalarField& f, const ScalarField& g) {
  space.check_field(f);
  space.check_field(g);
  const double mf = mean(space, f);
  const double mg = mean(space, g);
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) s += (f[x] - mf) * (g[x] - mg) * space.mu(x);
  return s.value();
}

// Centered two-pass form; equals mu(f^2) - mu(f)^2 without cancellation.
inline double variance(const FiniteSpace& space, const ScalarField& f) {
  return std::max(0.0, covariance(space, f, f));
}

// x log x with 0 log 0 = 0; relaxed mode clamps tiny entries before the log.
inline double xlogx(double x, LogMode mode = LogMode::strict) {
  if (x < 0.0) throw InvalidArgument("entropy: negative entry");
  if (x == 0.0) return 0.0;
  if (mode == LogMode::relaxed && x < 1e-300) x = 1e-300;
  return x * std::log(x);
}

inline void require_nonnegative(const ScalarField& f, const char* what) {
  for (double v : f) {
    if (!(v >= 0.0)) throw InvalidArgument(std::string(what) + ": negative or NaN entry");
  }
}

inline double entropy(const FiniteSpace& space, const ScalarField& f, LogMode mode = LogMode::strict) {
  space.check_field(f);
  require_nonnegative(f, "entropy");
  const double m = mean(space, f);
  if (m == 0.0) return 0.0;
  // Ent(f) = mu(f log(f/m)) computed as a sum of nonnegative-in-aggregate terms.
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) {
    const double v = f[x] / m;
    s += space.mu(x) * m * xlogx(v, mode);
  }
  return std::max(0.0, s.value());
}

inline double moment(const FiniteSpace& space, const ScalarField& f, double p) {
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) s += space.mu(x) * std::pow(f[x], p);
  return s.value();
}

inline double p_defect(const FiniteSpace& space, const ScalarField& f, double p) {
  space.check_field(f);
  if (!(p > 1.0 && p <= 2.0)) throw InvalidArgument("p_defect: p must lie in (1,2]");
  require_nonnegative(f, "p_defect");
  const double m = mean(space, f);
  if (m == 0.0) return 0.0;
  // Normalize by the mean so both terms are O(1): m^p (mu((f/m)^p) - 1).
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) s += space.mu(x) * (std::pow(f[x] / m, p) - 1.0);
  return std::max(0.0, std::pow(m, p) * s.value());
}

inline double lr_norm(const FiniteSpace& space, const ScalarField& f, double r) {
  space.check_field(f);
  if (!(r >= 1.0)) throw InvalidArgument("lr_norm: r must be >= 1");
  double scale = 0.0;
  for (double v : f) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  KahanSum s;
  for (std::size_t x = 0; x < f.size(); ++x) s += space.mu(x) * std::pow(std::abs(f[x]) / scale, r);
  return scale * std::pow(s.value(), 1.0 / r);
}

}  // namespace fineq
