#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "dirichlet.hpp"
#include "finite_space.hpp"
#include "rng.hpp"

namespace fineq {

// ============================================================================
// Reports
// ============================================================================

enum class ConstantKind { poincare, mlsi, lsi, beckner_p, beckner_q };

inline std::string to_string(ConstantKind k) {
  switch (k) {
    case ConstantKind::poincare: return "poincare";
    case ConstantKind::mlsi: return "mlsi";
    case ConstantKind::lsi: return "lsi";
    case ConstantKind::beckner_p: return "beckner_p";
    case ConstantKind::beckner_q: return "beckner_q";
  }
  return "unknown";
}

struct ConstantReport {
  ConstantKind kind = ConstantKind::poincare;
  std::optional<double> parameter;
  double value = 0.0;
  ScalarField witness;
  int iterations = 0;
  double gap_certificate = 0.0;
  bool converged = true;
  // True when the infimum is the small-perturbation limit around constants,
  // which is a multiple of the spectral gap; the witness is then a small
  // exponential perturbation along the gap eigenfunction.
  bool constant_limit = false;
  int best_start = -1;
  int starts = 0;
};

struct OptimizerOptions {
  int starts = 32;
  int max_iterations = 3000;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
  double warm_amplitude = 0.5;
  int memory = 8;
  // Extra starting points in the objective's own u-coordinates (f = exp(u)).
  std::vector<ScalarField> warm_starts;
};

// ============================================================================
// Poincare constant
// ============================================================================

namespace detail {

// y = S v with S = D^{1/2} (-L) D^{-1/2}, D = diag(mu).
inline void symmetrized_apply(const Kernel& k, const std::vector<double>& sq, const Eigen::VectorXd& v,
                              Eigen::VectorXd& y) {
  const std::size_t n = k.size();
  y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t x = 0; x < n; ++x) {
    KahanSum s;
    const auto xi = static_cast<Eigen::Index>(x);
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t t = k.target(j);
      s += k.rate_at(j) * v(xi);
      s += -k.rate_at(j) * sq[x] / sq[t] * v(static_cast<Eigen::Index>(t));
    }
    y(xi) = s.value();
  }
}

struct Eigenpair {
  double value;
  Eigen::VectorXd vector;  // in symmetrized coordinates, unit norm
  int iterations;
  double residual;
};

inline Eigenpair dense_gap(const Kernel& k, const std::vector<double>& sq) {
  const auto n = static_cast<Eigen::Index>(k.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t x = 0; x < k.size(); ++x) {
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t t = k.target(j);
      const auto xi = static_cast<Eigen::Index>(x);
      s(xi, xi) += k.rate_at(j);
      s(xi, static_cast<Eigen::Index>(t)) -= k.rate_at(j) * sq[x] / sq[t];
    }
  }
  Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericalFailure("optimal_poincare: eigensolver failed");
  Eigen::VectorXd v = es.eigenvectors().col(1);
  Eigen::VectorXd sv = sym * v;
  return {es.eigenvalues()(1), v, 1, (sv - es.eigenvalues()(1) * v).norm()};
}

// Lanczos with full reorthogonalization on the complement of sqrt(mu).
inline Eigenpair lanczos_gap(const Kernel& k, const std::vector<double>& sq) {
  const auto n = static_cast<Eigen::Index>(k.size());
  Eigen::VectorXd phi0(n);
  for (Eigen::Index i = 0; i < n; ++i) phi0(i) = sq[static_cast<std::size_t>(i)];
  phi0.normalize();
  const int max_steps = static_cast<int>(std::min<Eigen::Index>(n - 1, 600));
  std::vector<Eigen::VectorXd> basis;
  std::vector<double> alpha, beta;
  Eigen::VectorXd q(n);
  RandomStream rng(0x5eed, 0);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = rng.normal();
  q -= phi0.dot(q) * phi0;
  q.normalize();
  double last = std::numeric_limits<double>::infinity();
  Eigen::VectorXd w;
  Eigenpair best{0.0, q, 0, 0.0};
  double scale = 0.0;
  for (int step = 0; step < max_steps; ++step) {
    basis.push_back(q);
    symmetrized_apply(k, sq, q, w);
    const double a = q.dot(w);
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass) {
      w -= phi0.dot(w) * phi0;
      for (const auto& b : basis) w -= b.dot(w) * b;
    }
    const double b = w.norm();
    scale = std::max({scale, std::abs(a), b});
    const bool exhausted = b <= 1e-10 * scale;
    const int m = static_cast<int>(alpha.size());
    const bool check = (m % 10 == 0) || exhausted || step + 1 == max_steps;
    if (check) {
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
      const double theta = es.eigenvalues()(0);
      Eigen::VectorXd y = es.eigenvectors().col(0);
      Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < m; ++i) v += y(i) * basis[static_cast<std::size_t>(i)];
      v.normalize();
      Eigen::VectorXd sv;
      symmetrized_apply(k, sq, v, sv);
      const double res = (sv - theta * v).norm();
      best = {theta, v, m, res};
      if (exhausted || (std::abs(theta - last) <= 1e-13 * std::abs(theta) && res <= 1e-8 * std::max(1.0, theta))) {
        break;
      }
      last = theta;
    }
    if (exhausted) break;
    beta.push_back(b);
    q = w / b;
  }
  return best;
}

}  // namespace detail

inline constexpr std::size_t kDenseEigenLimit = 2000;

inline ConstantReport optimal_poincare(const Kernel& k) {
  require_irreducible(k);
  require(k.size() >= 2, "optimal_poincare: need at least two states");
  std::vector<double> sq(k.size());
  for (std::size_t x = 0; x < k.size(); ++x) sq[x] = std::sqrt(k.space().mu(x));
  const auto pair = k.size() <= kDenseEigenLimit ? detail::dense_gap(k, sq) : detail::lanczos_gap(k, sq);
  ConstantReport r;
  r.kind = ConstantKind::poincare;
  r.value = pair.value;
  r.iterations = pair.iterations;
  r.gap_certificate = pair.residual;
  r.witness.resize(k.size());
  double scale = 0.0;
  for (std::size_t x = 0; x < k.size(); ++x) {
    r.witness[x] = pair.vector(static_cast<Eigen::Index>(x)) / sq[x];
    scale = std::max(scale, std::abs(r.witness[x]));
  }
  // Normalize sup norm to 1 and fix the sign by the first significant entry.
  double sign = 1.0;
  for (double v : r.witness) {
    if (std::abs(v) > 1e-8 * scale) {
      sign = v > 0 ? 1.0 : -1.0;
      break;
    }
  }
  for (double& v : r.witness) v *= sign / scale;
  r.starts = 1;
  r.best_start = 0;
  return r;
}

// ============================================================================
// Ratio objectives over f = exp(u)
// ============================================================================

namespace detail {

// Rejects candidates whose scale-normalized denominator is numerically zero.
inline constexpr double kDenominatorGuard = 1e-12;

// Second-order remainders, exact to rounding near zero where the direct forms cancel.
// e^a - 1 - a
inline double expm1_remainder(double a) {
  if (std::abs(a) >= 0.1) return std::expm1(a) - a;
  double term = a, s = 0.0;
  for (int k = 2; k < 24; ++k) {
    term *= a / k;
    s += term;
  }
  return s;
}

// e^L (L - 1) + 1 = v log v - v + 1 for v = e^L
inline double entropy_kernel(double L) {
  if (std::abs(L) >= 0.1) return std::exp(L) * (L - 1.0) + 1.0;
  double term = 1.0, s = 0.0;
  for (int k = 1; k < 24; ++k) {
    term *= L / k;  // L^k / k!
    if (k >= 2) s += (k - 1) * term;
  }
  return s;
}

// e^{pL} - 1 - p (e^L - 1)
inline double power_kernel(double p, double L) {
  if (std::abs(L) * std::max(p, 1.0) >= 0.1) return std::expm1(p * L) - p * std::expm1(L);
  double term = 1.0, pk = 1.0, s = 0.0;
  for (int k = 1; k < 24; ++k) {
    term *= L / k;
    pk *= p;
    if (k >= 2) s += (pk - p) * term;
  }
  return s;
}

class RatioObjective {
 public:
  explicit RatioObjective(const Kernel& k) : k_(k), mu_(k.space().mu()) {
    // mu(1) - 1 with compensation; the series forms below assume unit mass.
    double s = 0.0, c = 0.0;
    for (double m : mu_) {
      const double t = s + m;
      c += std::abs(s) >= std::abs(m) ? (s - t) + m : (m - t) + s;
      s = t;
    }
    excess_ = (s - 1.0) + c;
  }
  virtual ~RatioObjective() = default;

  // Returns +inf when the candidate is rejected; fills grad when non-null.
  virtual double evaluate(const std::vector<double>& u, std::vector<double>* grad) const = 0;
  virtual ScalarField witness(const std::vector<double>& u) const = 0;
  // Multiple of the spectral gap obtained in the limit f -> constant.
  virtual double constant_limit(double lambda) const = 0;

 protected:
  static std::vector<double> shifted_exp(const std::vector<double>& u, double factor, double& shift) {
    shift = *std::max_element(u.begin(), u.end());
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = std::exp(factor * (u[i] - shift));
    return out;
  }
  double weighted_sum(const std::vector<double>& v) const {
    KahanSum s;
    for (std::size_t i = 0; i < v.size(); ++i) s += mu_[i] * v[i];
    return s.value();
  }
  double inner(const std::vector<double>& a, const std::vector<double>& b) const {
    KahanSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s.value();
  }
  std::vector<double> lap(const std::vector<double>& g) const { return weighted_laplacian(k_, g); }

  // L_i = c u_i - log mu(e^{c u}), accurate when c u is nearly constant.
  std::vector<double> log_ratio(const std::vector<double>& u, double c) const {
    KahanSum m;
    for (std::size_t i = 0; i < u.size(); ++i) m += mu_[i] * c * u[i];
    const double centre = m.value();
    std::vector<double> a(u.size());
    double spread = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      a[i] = c * u[i] - centre;
      spread = std::max(spread, std::abs(a[i]));
    }
    double log_mass;
    if (spread <= 1.0) {
      KahanSum x;
      x += excess_;
      for (std::size_t i = 0; i < u.size(); ++i) {
        x += mu_[i] * a[i];
        x += mu_[i] * expm1_remainder(a[i]);
      }
      log_mass = std::log1p(x.value());
    } else {
      const double top = *std::max_element(a.begin(), a.end());
      KahanSum x;
      for (std::size_t i = 0; i < u.size(); ++i) x += mu_[i] * std::exp(a[i] - top);
      log_mass = top + std::log(x.value());
    }
    for (double& v : a) v -= log_mass;
    return a;
  }

  // (1/2) sum mu(x) Q(x,y) phi(u_x, u_y) over ordered pairs.
  template <class Phi>
  double edge_sum(Phi phi) const {
    KahanSum s;
    for (std::size_t x = 0; x < k_.size(); ++x) {
      for (std::size_t j = k_.row_begin(x); j < k_.row_end(x); ++j) {
        s += 0.5 * mu_[x] * k_.rate_at(j) * phi(x, k_.target(j));
      }
    }
    return s.value();
  }

  const Kernel& k_;
  const std::vector<double>& mu_;
  double excess_ = 0.0;
};

class MlsiObjective final : public RatioObjective {
 public:
  using RatioObjective::RatioObjective;
  double evaluate(const std::vector<double>& u, std::vector<double>* grad) const override {
    double m;
    const auto f = shifted_exp(u, 1.0, m);
    const double mass = weighted_sum(f);
    const auto L = log_ratio(u, 1.0);
    KahanSum ent;
    ent += -excess_;
    for (std::size_t i = 0; i < u.size(); ++i) ent += mu_[i] * entropy_kernel(L[i]);
    const double d = mass * ent.value();
    if (!(d > kDenominatorGuard * mass)) return std::numeric_limits<double>::infinity();
    // E(f, log f) with (f_y - f_x)(u_y - u_x) >= 0 per edge.
    const double num = edge_sum([&](std::size_t x, std::size_t y) {
      return f[x] * std::expm1(u[y] - u[x]) * (u[y] - u[x]);
    });
    const double ratio = num / d;
    if (grad) {
      const auto lu = lap(u);
      const auto lf = lap(f);
      grad->resize(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double dn = f[i] * lu[i] + lf[i];
        const double dd = mu_[i] * f[i] * L[i];
        (*grad)[i] = (dn - ratio * dd) / d;
      }
    }
    return ratio;
  }
  ScalarField witness(const std::vector<double>& u) const override {
    double m;
    return shifted_exp(u, 1.0, m);
  }
  double constant_limit(double lambda) const override { return 2.0 * lambda; }
};

class LsiObjective final : public RatioObjective {
 public:
  using RatioObjective::RatioObjective;
  double evaluate(const std::vector<double>& u, std::vector<double>* grad) const override {
    double m;
    const auto g = shifted_exp(u, 1.0, m);
    std::vector<double> h(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) h[i] = g[i] * g[i];
    const double mass = weighted_sum(h);
    const auto L = log_ratio(u, 2.0);
    KahanSum ent;
    ent += -excess_;
    for (std::size_t i = 0; i < u.size(); ++i) ent += mu_[i] * entropy_kernel(L[i]);
    const double d = mass * ent.value();
    if (!(d > kDenominatorGuard * mass)) return std::numeric_limits<double>::infinity();
    const double num = edge_sum([&](std::size_t x, std::size_t y) {
      const double diff = g[x] * std::expm1(u[y] - u[x]);
      return diff * diff;
    });
    const double ratio = num / d;
    if (grad) {
      const auto lg = lap(g);
      grad->resize(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double dn = 2.0 * g[i] * lg[i];
        const double dd = 2.0 * mu_[i] * h[i] * L[i];
        (*grad)[i] = (dn - ratio * dd) / d;
      }
    }
    return ratio;
  }
  ScalarField witness(const std::vector<double>& u) const override {
    double m;
    return shifted_exp(u, 1.0, m);
  }
  double constant_limit(double lambda) const override { return 0.5 * lambda; }
};

class BecknerPObjective final : public RatioObjective {
 public:
  BecknerPObjective(const Kernel& k, double p) : RatioObjective(k), p_(p) {}
  double evaluate(const std::vector<double>& u, std::vector<double>* grad) const override {
    const double q = p_ - 1.0;
    double m;
    const auto f = shifted_exp(u, 1.0, m);
    const double mass = weighted_sum(f);
    const auto L = log_ratio(u, 1.0);
    // mu(f^p) - mu(f)^p = M^p mu(v^p - 1 - p(v - 1)), v = f/M.
    KahanSum acc;
    acc += (1.0 - p_) * excess_;
    for (std::size_t i = 0; i < u.size(); ++i) acc += mu_[i] * power_kernel(p_, L[i]);
    const double mp = std::pow(mass, p_);
    const double d = mp * acc.value();
    if (!(d > kDenominatorGuard * mp)) return std::numeric_limits<double>::infinity();
    std::vector<double> fq(u.size()), fpow(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      fq[i] = std::expm1(q * (u[i] - m));
      fpow[i] = std::exp(q * (u[i] - m));
    }
    // (p/2) E(f, f^{p-1}), each edge term nonnegative.
    const double num = 0.5 * p_ * edge_sum([&](std::size_t x, std::size_t y) {
      const double du = u[y] - u[x];
      return f[x] * std::expm1(du) * fpow[x] * std::expm1(q * du);
    });
    const double ratio = num / d;
    if (grad) {
      const auto lf = lap(f);
      const auto lfq = lap(fq);
      grad->resize(u.size());
      const double mq = std::pow(mass, q);
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double dn = 0.5 * p_ * (f[i] * lfq[i] + q * fpow[i] * lf[i]);
        const double dd = p_ * mu_[i] * f[i] * mq * std::expm1(q * L[i]);
        (*grad)[i] = (dn - ratio * dd) / d;
      }
    }
    return ratio;
  }
  ScalarField witness(const std::vector<double>& u) const override {
    double m;
    return shifted_exp(u, 1.0, m);
  }
  double constant_limit(double lambda) const override { return lambda; }

 private:
  double p_;
};

class BecknerQObjective final : public RatioObjective {
 public:
  BecknerQObjective(const Kernel& k, double q) : RatioObjective(k), q_(q) {}
  double evaluate(const std::vector<double>& u, std::vector<double>* grad) const override {
    double m;
    const auto g = shifted_exp(u, 1.0, m);
    std::vector<double> g2(g.size()), gq(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g2[i] = g[i] * g[i];
      gq[i] = std::exp(q_ * (u[i] - m));
    }
    const double b = weighted_sum(g2);
    const double a = weighted_sum(gq);
    // mu(g^2) - mu(g^q)^{2/q}, relative to mu(g^2), from the log ratios of g^2 and g^q.
    const auto L2 = log_ratio(u, 2.0);
    const auto Lq = log_ratio(u, q_);
    // With w = log(mu(g^q)^{2/q} / mu(g^2)) the defect is -b expm1(w).
    // mu(e^{2 L_q / q}) = e^{-w}, and e^{2L_q/q} = e^{L_2 - w} pointwise, so
    // w = -log mu(e^{2 L_q / q}) is accurate through log1p of a centred sum.
    KahanSum x;
    for (std::size_t i = 0; i < u.size(); ++i) x += mu_[i] * (std::expm1(2.0 * Lq[i] / q_) - std::expm1(L2[i]));
    const double w = -std::log1p(x.value());
    const double d = -b * std::expm1(w);
    if (!(d > kDenominatorGuard * b)) return std::numeric_limits<double>::infinity();
    const double num = (2.0 - q_) * edge_sum([&](std::size_t xs, std::size_t ys) {
      const double diff = g[xs] * std::expm1(u[ys] - u[xs]);
      return diff * diff;
    });
    const double ratio = num / d;
    if (grad) {
      const auto lg = lap(g);
      grad->resize(u.size());
      const double c = std::pow(a, 2.0 / q_ - 1.0);
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double dn = 2.0 * (2.0 - q_) * g[i] * lg[i];
        const double dd = 2.0 * mu_[i] * (g2[i] - c * gq[i]);
        (*grad)[i] = (dn - ratio * dd) / d;
      }
    }
    return ratio;
  }
  ScalarField witness(const std::vector<double>& u) const override {
    double m;
    return shifted_exp(u, 1.0, m);
  }
  double constant_limit(double lambda) const override { return lambda; }

 private:
  double q_;
};

struct RunResult {
  double value = std::numeric_limits<double>::infinity();
  std::vector<double> u;
  int iterations = 0;
  double last_improvement = 0.0;
  bool converged = false;
};

inline void center(std::vector<double>& v) {
  KahanSum s;
  for (double x : v) s += x;
  const double m = s.value() / static_cast<double>(v.size());
  for (double& x : v) x -= m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  KahanSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s.value();
}

// L-BFGS on the mean-zero subspace with Armijo backtracking.
inline RunResult minimize(const RatioObjective& obj, std::vector<double> u, const OptimizerOptions& opts) {
  RunResult res;
  center(u);
  std::vector<double> g;
  double fx = obj.evaluate(u, &g);
  if (!std::isfinite(fx)) return res;
  center(g);
  std::deque<std::vector<double>> ss, ys;
  std::deque<double> rhos;
  int small_steps = 0;
  res.converged = false;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const double gnorm = std::sqrt(dot(g, g));
    if (gnorm <= 1e-14 * std::abs(fx)) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    std::vector<double> d = g;
    std::vector<double> al(ss.size());
    for (std::size_t i = ss.size(); i-- > 0;) {
      al[i] = rhos[i] * dot(ss[i], d);
      for (std::size_t j = 0; j < d.size(); ++j) d[j] -= al[i] * ys[i][j];
    }
    double gamma = 1.0 / gnorm;
    if (!ss.empty()) gamma = dot(ss.back(), ys.back()) / dot(ys.back(), ys.back());
    for (double& v : d) v *= gamma;
    for (std::size_t i = 0; i < ss.size(); ++i) {
      const double b = rhos[i] * dot(ys[i], d);
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += ss[i][j] * (al[i] - b);
    }
    for (double& v : d) v = -v;
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      ss.clear();
      ys.clear();
      rhos.clear();
      d = g;
      for (double& v : d) v = -v / gnorm;
      slope = dot(g, d);
    }
    double step = 1.0;
    std::vector<double> un(u.size()), gn;
    double fn = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < u.size(); ++j) un[j] = u[j] + step * d[j];
      fn = obj.evaluate(un, &gn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = true;  // no descent available at working precision
      break;
    }
    center(un);
    center(gn);
    std::vector<double> s(u.size()), y(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
      s[j] = un[j] - u[j];
      y[j] = gn[j] - g[j];
    }
    const double sy = dot(s, y);
    if (sy > 1e-300) {
      ss.push_back(std::move(s));
      ys.push_back(std::move(y));
      rhos.push_back(1.0 / sy);
      if (static_cast<int>(ss.size()) > opts.memory) {
        ss.pop_front();
        ys.pop_front();
        rhos.pop_front();
      }
    }
    const double improvement = (fx - fn) / std::abs(fx);
    res.last_improvement = improvement;
    u = std::move(un);
    g = std::move(gn);
    fx = fn;
    small_steps = improvement < opts.tolerance ? small_steps + 1 : 0;
    if (small_steps >= 3) {
      res.converged = true;
      ++it;
      break;
    }
  }
  res.value = fx;
  res.u = std::move(u);
  res.iterations = it;
  return res;
}

}  // namespace detail

// ============================================================================
// ConstantEstimator
// ============================================================================

// Caches the spectral gap of one kernel and runs the ratio optimizers.
class ConstantEstimator {
 public:
  ConstantEstimator(Kernel k, OptimizerOptions opts = {}) : k_(std::move(k)), opts_(std::move(opts)) {
    require_irreducible(k_);
  }

  const Kernel& kernel() const { return k_; }
  const OptimizerOptions& options() const { return opts_; }

  const ConstantReport& poincare() {
    if (!poincare_) poincare_ = optimal_poincare(k_);
    return *poincare_;
  }

  ConstantReport mlsi(const std::vector<ScalarField>& extra = {}) {
    detail::MlsiObjective obj(k_);
    return run(obj, ConstantKind::mlsi, std::nullopt, extra);
  }
  ConstantReport lsi(const std::vector<ScalarField>& extra = {}) {
    detail::LsiObjective obj(k_);
    return run(obj, ConstantKind::lsi, std::nullopt, extra);
  }
  ConstantReport beckner_p(double p, const std::vector<ScalarField>& extra = {}) {
    if (!(p > 1.0 && p <= 2.0)) throw InvalidArgument("optimal_beckner_p: p must lie in (1,2]");
    detail::BecknerPObjective obj(k_, p);
    return run(obj, ConstantKind::beckner_p, p, extra);
  }
  ConstantReport beckner_q(double q, const std::vector<ScalarField>& extra = {}) {
    if (!(q >= 1.0 && q < 2.0)) throw InvalidArgument("optimal_beckner_q: q must lie in [1,2)");
    detail::BecknerQObjective obj(k_, q);
    return run(obj, ConstantKind::beckner_q, q, extra);
  }

  // Objective values at a given u, for cross-checks and grid oracles.
  double mlsi_ratio(const std::vector<double>& u) const { return detail::MlsiObjective(k_).evaluate(u, nullptr); }
  double lsi_ratio(const std::vector<double>& u) const { return detail::LsiObjective(k_).evaluate(u, nullptr); }
  double beckner_p_ratio(double p, const std::vector<double>& u) const {
    return detail::BecknerPObjective(k_, p).evaluate(u, nullptr);
  }
  double beckner_q_ratio(double q, const std::vector<double>& u) const {
    return detail::BecknerQObjective(k_, q).evaluate(u, nullptr);
  }

 private:
  ConstantReport run(const detail::RatioObjective& obj, ConstantKind kind, std::optional<double> param,
                     const std::vector<ScalarField>& extra) {
    const auto& gap = poincare();
    const std::size_t n = k_.size();
    std::vector<ScalarField> fixed;
    ScalarField e(n);
    for (std::size_t x = 0; x < n; ++x) e[x] = opts_.warm_amplitude * gap.witness[x];
    fixed.push_back(e);
    for (double& v : e) v = -v;
    fixed.push_back(e);
    for (const auto& w : opts_.warm_starts) fixed.push_back(w);
    for (const auto& w : extra) fixed.push_back(w);

    const int total = std::max<int>(opts_.starts, 1);
    const double sigmas[] = {0.5, 1.0, 2.0, 4.0};
    ConstantReport best;
    best.kind = kind;
    best.parameter = param;
    best.value = std::numeric_limits<double>::infinity();
    best.converged = false;
    std::vector<double> best_u;
    // Fixed slots come first; extra warm starts are appended after the
    // random ones so adding them never displaces a seeded start.
    const int random_slots = std::max(0, total - 2);
    const int slots = 2 + random_slots + static_cast<int>(fixed.size()) - 2;
    for (int s = 0; s < slots; ++s) {
      std::vector<double> u0;
      if (s < 2) {
        u0 = fixed[static_cast<std::size_t>(s)];
      } else if (s < 2 + random_slots) {
        RandomStream rng(opts_.seed, static_cast<std::uint64_t>(s));
        const double sigma = sigmas[s % 4];
        u0.resize(n);
        for (double& v : u0) v = sigma * rng.normal();
      } else {
        u0 = fixed[static_cast<std::size_t>(s - random_slots)];
        require(u0.size() == n, "warm start has wrong length");
      }
      auto res = detail::minimize(obj, u0, opts_);
      best.iterations += res.iterations;
      if (res.value < best.value) {
        best.value = res.value;
        best_u = res.u;
        best.best_start = s;
        best.gap_certificate = res.last_improvement;
        best.converged = res.converged;
      }
    }
    best.starts = slots;
    const double limit = obj.constant_limit(gap.value);
    if (!(best.value <= limit)) {
      best.value = limit;
      best.constant_limit = true;
      best.converged = true;
      best.gap_certificate = 0.0;
      best.best_start = -1;
      best_u.assign(n, 0.0);
      for (std::size_t x = 0; x < n; ++x) best_u[x] = 1e-3 * gap.witness[x];
    }
    best.witness = obj.witness(best_u);
    return best;
  }

  Kernel k_;
  OptimizerOptions opts_;
  std::optional<ConstantReport> poincare_;
};

inline ConstantReport optimal_mlsi(const Kernel& k, const OptimizerOptions& opts = {}) {
  return ConstantEstimator(k, opts).mlsi();
}
inline ConstantReport optimal_lsi(const Kernel& k, const OptimizerOptions& opts = {}) {
  return ConstantEstimator(k, opts).lsi();
}
inline ConstantReport optimal_beckner_p(const Kernel& k, double p, const OptimizerOptions& opts = {}) {
  return ConstantEstimator(k, opts).beckner_p(p);
}
inline ConstantReport optimal_beckner_q(const Kernel& k, double q, const OptimizerOptions& opts = {}) {
  return ConstantEstimator(k, opts).beckner_q(q);
}

// Converts a nonnegative witness to u-coordinates, u = factor * log(w).
inline ScalarField log_coordinates(const ScalarField& w, double factor = 1.0) {
  double top = 0.0;
  for (double v : w) top = std::max(top, v);
  ScalarField u(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = std::max(w[i], top * 1e-300);
    u[i] = factor * std::log(v / top);
  }
  return u;
}

// ============================================================================
// K_p constants
// ============================================================================

struct KConstants {
  double p = 0.0;
  double theta_opt = 0.0;
  double k_value = 0.0;
  double K_p = 0.0;
};

inline double k_theta(double p, double theta) {
  if (!(p > 1.0 && p <= 2.0)) throw InvalidArgument("k_theta: p must lie in (1,2]");
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("k_theta: theta must lie in (0,1)");
  const double grow = std::expm1(p * std::log1p(theta));  // (1+theta)^p - 1
  const double first = 1.0 - 2.0 * grow / (p * (p - 1.0) * (1.0 - theta) * (1.0 - theta));
  const double second = std::exp((p - 1.0) * (std::log(theta) - 1.0 - std::log1p(theta)));
  return first * second;
}

inline KConstants big_K(double p) {
  if (!(p > 1.0 && p <= 2.0)) throw InvalidArgument("big_K: p must lie in (1,2]");
  constexpr int kGrid = 10001;
  const double lo = 1e-6;
  const double hi = 1.0 - 1e-6;
  // Geometric spacing resolves the peak near (p-1)^2 when p is close to 1.
  const double ratio = std::log(hi / lo) / (kGrid - 1);
  auto grid = [&](int i) { return i == kGrid - 1 ? hi : lo * std::exp(ratio * i); };
  int arg = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    const double v = k_theta(p, grid(i));
    if (v > best) {
      best = v;
      arg = i;
    }
  }
  double a = grid(std::max(0, arg - 1));
  double b = grid(std::min(kGrid - 1, arg + 1));
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = k_theta(p, c), fd = k_theta(p, d);
  for (int it = 0; it < 200 && (b - a) > 1e-15 * b; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = k_theta(p, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = k_theta(p, d);
    }
  }
  KConstants out;
  out.p = p;
  const double mid = 0.5 * (a + b);
  const double fm = k_theta(p, mid);
  out.theta_opt = fm > best ? mid : grid(arg);
  out.k_value = std::max(fm, best);
  out.K_p = std::max(1.0 - 1.0 / p, 0.5 * p * out.k_value);
  return out;
}

// ============================================================================
// Verification
// ============================================================================

struct Check {
  std::string name;
  double lhs = 0.0;  // the side claimed to be larger
  double rhs = 0.0;
  double slack = 0.0;
  std::string citation;
  double margin() const { return lhs - rhs; }
  bool passed() const { return lhs - rhs >= -slack; }
};

struct VerificationReport {
  std::string name;
  std::vector<Check> checks;
  std::vector<ConstantReport> constants;
  std::map<std::string, double> values;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed(); });
  }
};

inline double one_sided_slack(double rhs, double rel = 0.01) { return std::max(1e-6, rel * std::abs(rhs)); }

inline VerificationReport verify_main_theorem(ConstantEstimator& est, const std::vector<double>& p_grid) {
  VerificationReport rep;
  rep.name = "main_theorem";
  auto rho0 = est.mlsi();
  rep.constants.push_back(rho0);
  rep.values["rho0"] = rho0.value;
  std::vector<ScalarField> warm{log_coordinates(rho0.witness)};
  for (double p : p_grid) {
    auto a = est.beckner_p(p, warm);
    warm.push_back(log_coordinates(a.witness));
    rep.constants.push_back(a);
    const auto kp = big_K(p);
    const std::string tag = "p=" + std::to_string(p);
    const double rhs = kp.K_p * rho0.value;
    rep.checks.push_back({"alpha_p >= K_p rho0 (" + tag + ")", a.value, rhs, one_sided_slack(rhs),
                          "alpha_p >= K_p rho0"});
    rep.checks.push_back({"alpha_p >= rho0/6 (" + tag + ")", a.value, rho0.value / 6.0,
                          one_sided_slack(rho0.value / 6.0), "alpha_p >= rho0/6"});
  }
  // Limit p -> 1 through a linear extrapolation in (p - 1).
  const double p1 = 1.01, p2 = 1.001;
  auto a1 = est.beckner_p(p1, warm);
  auto a2 = est.beckner_p(p2, warm);
  const double extrap = a2.value - (a1.value - a2.value) * (p2 - 1.0) / (p1 - p2);
  rep.values["alpha_1.01"] = a1.value;
  rep.values["alpha_1.001"] = a2.value;
  rep.values["alpha_limit_extrapolated"] = extrap;
  const double rel = std::abs(2.0 * extrap - rho0.value) / rho0.value;
  rep.values["limit_relative_error"] = rel;
  rep.checks.push_back({"2 alpha_{1+} matches rho0 within 5%", 0.05, rel, 0.0, "rho0 = 2 lim alpha_p"});
  return rep;
}

inline VerificationReport verify_main_theorem(const Kernel& k, const std::vector<double>& p_grid,
                                              const OptimizerOptions& opts = {}) {
  ConstantEstimator est(k, opts);
  return verify_main_theorem(est, p_grid);
}

inline std::vector<double> default_diagram_p_grid() { return {1.001, 1.01, 1.05, 1.2, 1.5, 2.0}; }

// The q grid is 2/p over the p grid so each alpha_{2/q} is available.
inline VerificationReport verify_implication_diagram(ConstantEstimator& est, std::vector<double> p_grid = {},
                                                     double rel_slack = 0.01) {
  if (p_grid.empty()) p_grid = default_diagram_p_grid();
  std::sort(p_grid.begin(), p_grid.end());
  VerificationReport rep;
  rep.name = "implication_diagram";
  auto slack = [&](double rhs) { return one_sided_slack(rhs, rel_slack); };
  const double lambda = est.poincare().value;
  auto rho0 = est.mlsi();
  std::vector<ScalarField> f_pool{log_coordinates(rho0.witness)};
  std::vector<ConstantReport> alphas;
  for (double p : p_grid) {
    alphas.push_back(est.beckner_p(p, f_pool));
    f_pool.push_back(log_coordinates(alphas.back().witness));
  }
  // g-coordinates: g = sqrt(f) from the mLSI witness, g = f^{p/2} from alpha_p.
  std::vector<ScalarField> g_pool{log_coordinates(rho0.witness, 0.5)};
  for (std::size_t i = 0; i < p_grid.size(); ++i) g_pool.push_back(log_coordinates(alphas[i].witness, p_grid[i] / 2));
  auto rho1 = est.lsi(g_pool);
  g_pool.push_back(log_coordinates(rho1.witness));
  std::vector<double> q_grid;
  std::vector<ConstantReport> betas;
  for (std::size_t i = 0; i < p_grid.size(); ++i) {
    const double q = 2.0 / p_grid[i];
    q_grid.push_back(q);
    betas.push_back(est.beckner_q(q, g_pool));
  }
  // Second pass for rho1 with the beta witnesses available.
  std::vector<ScalarField> g_more;
  for (const auto& b : betas) g_more.push_back(log_coordinates(b.witness));
  auto rho1b = est.lsi(g_more);
  if (rho1b.value < rho1.value) rho1 = rho1b;

  rep.values["lambda"] = lambda;
  rep.values["rho0"] = rho0.value;
  rep.values["rho1"] = rho1.value;
  rep.constants.push_back(est.poincare());
  rep.constants.push_back(rho0);
  rep.constants.push_back(rho1);
  for (const auto& a : alphas) rep.constants.push_back(a);
  for (const auto& b : betas) rep.constants.push_back(b);

  rep.checks.push_back({"rho0 >= 4 rho1", rho0.value, 4.0 * rho1.value, slack(4.0 * rho1.value), "rho0 >= 4 rho1"});
  for (std::size_t i = 0; i < q_grid.size(); ++i) {
    const double q = q_grid[i];
    const std::string tag = "q=" + std::to_string(q);
    rep.checks.push_back({"beta_q >= q rho1 (" + tag + ")", betas[i].value, q * rho1.value, slack(q * rho1.value),
                          "beta_q >= q rho1"});
    rep.checks.push_back({"alpha_{2/q} >= beta_q (" + tag + ")", alphas[i].value, betas[i].value,
                          slack(betas[i].value), "alpha_p >= beta_q, p = 2/q"});
  }
  const double a_min = alphas.front().value;
  rep.checks.push_back({"rho0 >= 2 alpha_{p_min}", rho0.value, 2.0 * a_min, slack(2.0 * a_min),
                        "rho0 >= 2 limsup alpha_p"});
  // q_grid is decreasing in p, so the largest q belongs to the smallest p.
  const double b_max = betas.front().value;
  rep.checks.push_back({"rho1 >= beta_{q_max}/2", rho1.value, 0.5 * b_max, slack(0.5 * b_max),
                        "rho1 >= (1/2) limsup beta_q"});
  rep.checks.push_back({"lambda >= rho0/2", lambda, 0.5 * rho0.value, slack(0.5 * rho0.value), "lambda >= rho0/2"});
  for (std::size_t i = 0; i < p_grid.size(); ++i) {
    rep.checks.push_back({"lambda >= alpha_p (p=" + std::to_string(p_grid[i]) + ")", lambda, alphas[i].value,
                          slack(alphas[i].value), "lambda >= alpha_p"});
  }
  for (std::size_t i = 0; i + 1 < p_grid.size(); ++i) {
    const double lo = p_grid[i], hi = p_grid[i + 1];
    const double v_lo = lo / (lo - 1.0) * alphas[i].value;
    const double v_hi = hi / (hi - 1.0) * alphas[i + 1].value;
    rep.checks.push_back({"p/(p-1) alpha_p nonincreasing (" + std::to_string(lo) + "->" + std::to_string(hi) + ")",
                          v_lo, v_hi, slack(v_hi), "p -> p/(p-1) alpha_p nonincreasing"});
  }
  return rep;
}

inline VerificationReport verify_implication_diagram(const Kernel& k, const OptimizerOptions& opts = {},
                                                     std::vector<double> p_grid = {}) {
  ConstantEstimator est(k, opts);
  return verify_implication_diagram(est, std::move(p_grid));
}

}  // namespace fineq
