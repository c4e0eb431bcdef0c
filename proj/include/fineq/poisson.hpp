#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "moments.hpp"
#include "rng.hpp"

namespace fineq {

// ============================================================================
// Windows and configurations
// ============================================================================

struct Window {
  std::vector<double> lower;
  std::vector<double> upper;
  double intensity = 1.0;

  static Window box(std::size_t dimension, double side, double intensity) {
    return Window{std::vector<double>(dimension, 0.0), std::vector<double>(dimension, side), intensity};
  }

  std::size_t dimension() const { return lower.size(); }
  double volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < lower.size(); ++k) v *= upper[k] - lower[k];
    return v;
  }
  double total_intensity() const { return intensity * volume(); }
  void validate() const {
    require(!lower.empty() && lower.size() == upper.size(), "Window: bounds must have matching nonzero dimension");
    for (std::size_t k = 0; k < lower.size(); ++k) {
      require(std::isfinite(lower[k]) && std::isfinite(upper[k]) && upper[k] > lower[k],
              "Window: every axis needs a finite interval of positive length");
    }
    require(std::isfinite(intensity) && intensity >= 0.0, "Window: intensity must be finite and nonnegative");
  }
  bool contains(std::span<const double> x) const {
    if (x.size() != dimension()) return false;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (x[k] < lower[k] || x[k] > upper[k]) return false;
    }
    return true;
  }
  std::vector<double> uniform_point(RandomStream& rng) const {
    std::vector<double> x(dimension());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.uniform(lower[k], upper[k]);
    return x;
  }
};

// Points stored row-major in one buffer.
class PointConfiguration {
 public:
  explicit PointConfiguration(std::size_t dimension = 2) : dim_(dimension) {}
  PointConfiguration(std::size_t dimension, std::vector<double> coords) : dim_(dimension), coords_(std::move(coords)) {
    require(dim_ > 0 && coords_.size() % dim_ == 0, "PointConfiguration: coordinate count must be a multiple of d");
  }

  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return coords_.size() / dim_; }
  bool empty() const { return coords_.empty(); }
  std::span<const double> point(std::size_t i) const { return {coords_.data() + i * dim_, dim_}; }
  const std::vector<double>& coords() const { return coords_; }

  void add(std::span<const double> x) {
    require(x.size() == dim_, "PointConfiguration: point has wrong dimension");
    coords_.insert(coords_.end(), x.begin(), x.end());
  }
  PointConfiguration with(std::span<const double> x) const {
    PointConfiguration c = *this;
    c.add(x);
    return c;
  }
  PointConfiguration without(std::size_t i) const {
    require(i < size(), "PointConfiguration: index out of range");
    PointConfiguration c(dim_);
    c.coords_.reserve(coords_.size() - dim_);
    c.coords_.insert(c.coords_.end(), coords_.begin(), coords_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
    c.coords_.insert(c.coords_.end(), coords_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_), coords_.end());
    return c;
  }
  void validate(const Window& w) const {
    require(dim_ == w.dimension(), "PointConfiguration: dimension differs from window");
    for (std::size_t i = 0; i < size(); ++i) require(w.contains(point(i)), "PointConfiguration: point outside window");
  }

 private:
  std::size_t dim_;
  std::vector<double> coords_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

inline PointConfiguration sample_process(const Window& w, RandomStream& rng) {
  PointConfiguration eta(w.dimension());
  const auto n = rng.poisson(w.total_intensity());
  for (std::uint64_t i = 0; i < n; ++i) eta.add(w.uniform_point(rng));
  return eta;
}

inline PointConfiguration sample_process(const Window& w, std::uint64_t seed) {
  w.validate();
  RandomStream rng(seed, 0);
  return sample_process(w, rng);
}

// Replica i of a run draws from stream (seed, i).
inline PointConfiguration sample_replica(const Window& w, std::uint64_t seed, std::size_t replica) {
  RandomStream rng(seed, replica);
  return sample_process(w, rng);
}

// ============================================================================
// Functionals
// ============================================================================

// Implementations must be pure: evaluation may not touch shared mutable state.
class PoissonFunctional {
 public:
  virtual ~PoissonFunctional() = default;
  virtual std::string name() const = 0;
  virtual double evaluate(const PointConfiguration& eta) const = 0;
  // D_x^+ F(eta) = F(eta + delta_x) - F(eta)
  virtual double add_gradient(const PointConfiguration& eta, std::span<const double> x) const {
    return evaluate(eta.with(x)) - evaluate(eta);
  }
  // D_x^- F(eta) = F(eta) - F(eta - delta_x) for x = point i of eta
  virtual double delete_gradient(const PointConfiguration& eta, std::size_t i) const {
    return evaluate(eta) - evaluate(eta.without(i));
  }
  virtual bool increasing() const { return false; }
};

class CountFunctional : public PoissonFunctional {
 public:
  std::string name() const override { return "count"; }
  double evaluate(const PointConfiguration& eta) const override { return static_cast<double>(eta.size()); }
  double add_gradient(const PointConfiguration&, std::span<const double>) const override { return 1.0; }
  double delete_gradient(const PointConfiguration&, std::size_t) const override { return 1.0; }
  bool increasing() const override { return true; }
};

// Number of pairs at distance <= radius.
class GilbertEdges : public PoissonFunctional {
 public:
  explicit GilbertEdges(double radius) : r2_(radius * radius), radius_(radius) {
    require(radius > 0.0, "GilbertEdges: radius must be positive");
  }
  std::string name() const override { return "gilbert_edges"; }
  double radius() const { return radius_; }
  double evaluate(const PointConfiguration& eta) const override {
    std::size_t e = 0;
    for (std::size_t i = 0; i < eta.size(); ++i)
      for (std::size_t j = i + 1; j < eta.size(); ++j) e += close(eta.point(i), eta.point(j));
    return static_cast<double>(e);
  }
  double add_gradient(const PointConfiguration& eta, std::span<const double> x) const override {
    std::size_t d = 0;
    for (std::size_t j = 0; j < eta.size(); ++j) d += close(x, eta.point(j));
    return static_cast<double>(d);
  }
  double delete_gradient(const PointConfiguration& eta, std::size_t i) const override {
    std::size_t d = 0;
    for (std::size_t j = 0; j < eta.size(); ++j) d += (j != i && close(eta.point(i), eta.point(j)));
    return static_cast<double>(d);
  }
  bool increasing() const override { return true; }

 private:
  bool close(std::span<const double> a, std::span<const double> b) const { return squared_distance(a, b) <= r2_; }
  double r2_;
  double radius_;
};

// Number of triples that are pairwise at distance <= radius.
class GilbertTriangles : public PoissonFunctional {
 public:
  explicit GilbertTriangles(double radius) : r2_(radius * radius), radius_(radius) {
    require(radius > 0.0, "GilbertTriangles: radius must be positive");
  }
  std::string name() const override { return "gilbert_triangles"; }
  double radius() const { return radius_; }
  double evaluate(const PointConfiguration& eta) const override {
    const auto adj = adjacency(eta);
    const std::size_t n = eta.size();
    std::size_t t = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!adj[i * n + j]) continue;
        for (std::size_t k = j + 1; k < n; ++k) t += adj[i * n + k] && adj[j * n + k];
      }
    return static_cast<double>(t);
  }
  double add_gradient(const PointConfiguration& eta, std::span<const double> x) const override {
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < eta.size(); ++j)
      if (squared_distance(x, eta.point(j)) <= r2_) nb.push_back(j);
    return neighbour_edges(eta, nb);
  }
  double delete_gradient(const PointConfiguration& eta, std::size_t i) const override {
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < eta.size(); ++j)
      if (j != i && squared_distance(eta.point(i), eta.point(j)) <= r2_) nb.push_back(j);
    return neighbour_edges(eta, nb);
  }
  bool increasing() const override { return true; }

 private:
  std::vector<char> adjacency(const PointConfiguration& eta) const {
    const std::size_t n = eta.size();
    std::vector<char> adj(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        adj[i * n + j] = adj[j * n + i] = squared_distance(eta.point(i), eta.point(j)) <= r2_;
    return adj;
  }
  double neighbour_edges(const PointConfiguration& eta, const std::vector<std::size_t>& nb) const {
    std::size_t e = 0;
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b) e += squared_distance(eta.point(nb[a]), eta.point(nb[b])) <= r2_;
    return static_cast<double>(e);
  }
  double r2_;
  double radius_;
};

// 1{eta(B(center, radius)) >= 1}.
class BallCovering : public PoissonFunctional {
 public:
  BallCovering(std::vector<double> center, double radius) : c_(std::move(center)), r2_(radius * radius) {
    require(radius > 0.0, "BallCovering: radius must be positive");
  }
  std::string name() const override { return "ball_covering"; }
  double evaluate(const PointConfiguration& eta) const override { return inside_count(eta) > 0 ? 1.0 : 0.0; }
  double add_gradient(const PointConfiguration& eta, std::span<const double> x) const override {
    return (inside(x) && inside_count(eta) == 0) ? 1.0 : 0.0;
  }
  double delete_gradient(const PointConfiguration& eta, std::size_t i) const override {
    return (inside(eta.point(i)) && inside_count(eta) == 1) ? 1.0 : 0.0;
  }
  bool increasing() const override { return true; }

 private:
  bool inside(std::span<const double> x) const { return squared_distance(x, c_) <= r2_; }
  std::size_t inside_count(const PointConfiguration& eta) const {
    std::size_t k = 0;
    for (std::size_t i = 0; i < eta.size(); ++i) k += inside(eta.point(i));
    return k;
  }
  std::vector<double> c_;
  double r2_;
};

inline std::unique_ptr<PoissonFunctional> make_functional(const std::string& name, double radius,
                                                          const Window& w) {
  if (name == "count") return std::make_unique<CountFunctional>();
  if (name == "gilbert_edges") return std::make_unique<GilbertEdges>(radius);
  if (name == "gilbert_triangles") return std::make_unique<GilbertTriangles>(radius);
  if (name == "ball_covering") {
    std::vector<double> c(w.dimension());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = 0.5 * (w.lower[k] + w.upper[k]);
    return std::make_unique<BallCovering>(c, radius);
  }
  throw InvalidArgument("unknown Poisson functional '" + name + "'");
}

// max |D^-F(eta + delta_x) - D^+F(eta)| over sampled (eta, x).
inline double consistency_defect(const PoissonFunctional& F, const Window& w, std::size_t samples, std::uint64_t seed) {
  w.validate();
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    RandomStream rng(seed, s);
    auto eta = sample_process(w, rng);
    const auto x = w.uniform_point(rng);
    const auto plus = eta.with(x);
    worst = std::max(worst, std::abs(F.delete_gradient(plus, plus.size() - 1) - F.add_gradient(eta, x)));
    worst = std::max(worst, std::abs(F.add_gradient(eta, x) - (F.evaluate(plus) - F.evaluate(eta))));
  }
  return worst;
}

// ============================================================================
// Mecke formula
// ============================================================================

using MeckeFunction = std::function<double(const PointConfiguration&, std::span<const double>)>;

struct MeckeTerm {
  std::string name;
  MeckeFunction H;
};

struct MeckeResult {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs_stderr = 0.0;
  double diff_stderr = 0.0;  // stderr of the paired difference
  std::size_t samples = 0;
  double z() const { return diff_stderr > 0.0 ? (lhs - rhs) / diff_stderr : 0.0; }
  bool passed(double sigmas = 3.0) const { return std::abs(lhs - rhs) <= sigmas * diff_stderr + 1e-12 * std::abs(rhs); }
};

// E sum_i H(eta - delta_{X_i}, X_i) against lambda(W) E H(eta, U) with U uniform, both per replica.
inline MeckeResult mecke_check(const Window& w, const MeckeTerm& term, std::size_t samples, std::uint64_t seed,
                               std::size_t quadrature_points = 4) {
  w.validate();
  require(samples >= 2, "mecke_check: need at least two samples");
  require(quadrature_points >= 1, "mecke_check: need a quadrature point");
  KahanSum sl, sl2, sr, sr2, sd2, sd;
  const double lam = w.total_intensity();
  for (std::size_t s = 0; s < samples; ++s) {
    RandomStream rng(seed, s);
    const auto eta = sample_process(w, rng);
    double l = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) l += term.H(eta.without(i), eta.point(i));
    double r = 0.0;
    if (lam > 0.0) {
      for (std::size_t q = 0; q < quadrature_points; ++q) {
        const auto u = w.uniform_point(rng);
        r += term.H(eta, u);
      }
      r *= lam / static_cast<double>(quadrature_points);
    }
    sl += l;
    sl2 += l * l;
    sr += r;
    sr2 += r * r;
    sd += l - r;
    sd2 += (l - r) * (l - r);
  }
  const double n = static_cast<double>(samples);
  auto se = [n](const KahanSum& a, const KahanSum& a2) {
    const double m = a.value() / n;
    return std::sqrt(std::max(0.0, a2.value() / n - m * m) / (n - 1.0));
  };
  MeckeResult out;
  out.name = term.name;
  out.samples = samples;
  out.lhs = sl.value() / n;
  out.rhs = sr.value() / n;
  out.lhs_stderr = se(sl, sl2);
  out.rhs_stderr = se(sr, sr2);
  out.diff_stderr = se(sd, sd2);
  return out;
}

// Constant, count, coordinate sum, neighbour count and isolation indicator.
inline std::vector<MeckeTerm> mecke_library(double radius) {
  const double r2 = radius * radius;
  std::vector<MeckeTerm> lib;
  lib.push_back({"one", [](const PointConfiguration&, std::span<const double>) { return 1.0; }});
  lib.push_back({"count", [](const PointConfiguration& eta, std::span<const double>) {
                   return static_cast<double>(eta.size());
                 }});
  lib.push_back({"coordinate_sum", [](const PointConfiguration&, std::span<const double> x) {
                   double s = 0.0;
                   for (double v : x) s += v;
                   return s;
                 }});
  lib.push_back({"neighbours", [r2](const PointConfiguration& eta, std::span<const double> x) {
                   std::size_t k = 0;
                   for (std::size_t i = 0; i < eta.size(); ++i) k += squared_distance(eta.point(i), x) <= r2;
                   return static_cast<double>(k);
                 }});
  lib.push_back({"isolated", [r2](const PointConfiguration& eta, std::span<const double> x) {
                   for (std::size_t i = 0; i < eta.size(); ++i)
                     if (squared_distance(eta.point(i), x) <= r2) return 0.0;
                   return 1.0;
                 }});
  return lib;
}

// ============================================================================
// Square gradients
// ============================================================================

struct PoissonGradients {
  double gamma_plus = 0.0;       // int (D^-F)_+^2 d eta + int (D^+F)_-^2 d lambda
  double gamma = 0.0;            // (1/2)(int (D^-F)^2 d eta + int (D^+F)^2 d lambda)
  double eta_plus = 0.0;         // exact eta-integral of (D^-F)_+^2
  double lambda_minus = 0.0;     // quadrature estimate of the lambda-integral of (D^+F)_-^2
  double lambda_minus_stderr = 0.0;
  double lambda_square = 0.0;    // quadrature estimate of the lambda-integral of (D^+F)^2
  double lambda_square_stderr = 0.0;
};

inline PoissonGradients poisson_gradients(const PoissonFunctional& F, const PointConfiguration& eta, const Window& w,
                                          std::size_t quadrature_points, RandomStream& rng) {
  PoissonGradients g;
  KahanSum ep, es;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    const double d = F.delete_gradient(eta, i);
    ep += positive_part(d) * positive_part(d);
    es += d * d;
  }
  g.eta_plus = ep.value();
  const double lam = w.total_intensity();
  if (lam > 0.0 && quadrature_points > 0) {
    KahanSum m, m2, s, s2;
    for (std::size_t q = 0; q < quadrature_points; ++q) {
      const auto x = w.uniform_point(rng);
      const double d = F.add_gradient(eta, x);
      const double neg = negative_part(d) * negative_part(d) * lam;
      m += neg;
      m2 += neg * neg;
      s += d * d * lam;
      s2 += d * d * lam * d * d * lam;
    }
    const double qn = static_cast<double>(quadrature_points);
    g.lambda_minus = m.value() / qn;
    g.lambda_square = s.value() / qn;
    if (quadrature_points > 1) {
      g.lambda_minus_stderr = std::sqrt(std::max(0.0, m2.value() / qn - g.lambda_minus * g.lambda_minus) / (qn - 1.0));
      g.lambda_square_stderr =
          std::sqrt(std::max(0.0, s2.value() / qn - g.lambda_square * g.lambda_square) / (qn - 1.0));
    }
  }
  g.gamma_plus = g.eta_plus + g.lambda_minus;
  g.gamma = 0.5 * (es.value() + g.lambda_square);
  return g;
}

inline double gamma_plus_poisson(const PoissonFunctional& F, const PointConfiguration& eta, const Window& w,
                                 std::size_t quadrature_points, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  return poisson_gradients(F, eta, w, quadrature_points, rng).gamma_plus;
}

// ============================================================================
// Moment checks
// ============================================================================

struct PoissonMomentOptions {
  std::size_t quadrature_points = 16;
  std::size_t bootstrap = 100;
  double confidence = 0.95;
};

namespace detail {

inline double central_moment_norm(const std::vector<double>& x, const std::vector<std::size_t>* idx, double r,
                                  bool one_sided) {
  const std::size_t n = idx ? idx->size() : x.size();
  KahanSum m;
  for (std::size_t i = 0; i < n; ++i) m += x[idx ? (*idx)[i] : i];
  const double mu = m.value() / static_cast<double>(n);
  KahanSum s;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[idx ? (*idx)[i] : i] - mu;
    s += std::pow(one_sided ? positive_part(d) : std::abs(d), r);
  }
  return std::pow(s.value() / static_cast<double>(n), 1.0 / r);
}

// ||sqrt(V)||_r with a delta-method standard error.
inline std::pair<double, double> root_norm(const std::vector<double>& v, double r) {
  const double n = static_cast<double>(v.size());
  KahanSum m, m2;
  for (double x : v) {
    const double y = std::pow(std::max(0.0, x), 0.5 * r);
    m += y;
    m2 += y * y;
  }
  const double mean_y = m.value() / n;
  const double var = std::max(0.0, m2.value() / n - mean_y * mean_y);
  const double norm = std::pow(mean_y, 1.0 / r);
  const double se = mean_y > 0.0 ? norm / (r * mean_y) * std::sqrt(var / n) : 0.0;
  return {norm, se};
}

}  // namespace detail

// ||F - EF||_r <= D sqrt(r) ||sqrt(2 Gamma(F))||_r and ||(F - EF)_+||_r <= D sqrt(r) ||sqrt(Gamma_+(F))||_r.
// The lhs carries a bootstrap lower confidence limit; passing means rhs >= that limit.
inline MomentCheckReport poisson_moment_check(const PoissonFunctional& F, const Window& w,
                                              const std::vector<double>& r_values, std::size_t samples,
                                              std::uint64_t seed, const PoissonMomentOptions& opts = {}) {
  w.validate();
  validate_r_values(r_values);
  require(samples >= 2, "poisson_moment_check: need at least two samples");
  std::vector<double> values(samples), gam2(samples), gplus(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    RandomStream rng(seed, s);
    const auto eta = sample_process(w, rng);
    auto quad = rng.split(1);
    const auto g = poisson_gradients(F, eta, w, opts.quadrature_points, quad);
    values[s] = F.evaluate(eta);
    gam2[s] = 2.0 * g.gamma;
    gplus[s] = g.gamma_plus;
  }
  MomentCheckReport rep;
  rep.name = "poisson_moments:" + F.name();
  rep.method = "monte_carlo";
  rep.sample_count = samples;
  rep.seed = seed;
  rep.citations.push_back("||F-EF||_r <= D sqrt(r) ||(int (D+F)^2 d lambda + int (D-F)^2 d eta)^{1/2}||_r");
  rep.citations.push_back("||(F-EF)_+||_r <= D sqrt(r) ||sqrt(Gamma_+(F))||_r, D = sqrt(3 sqrt(e)/(sqrt(e)-1))");
  const double D = poisson_D();
  const double alpha = 0.5 * (1.0 - opts.confidence);
  for (double r : r_values) {
    for (int variant = 0; variant < 2; ++variant) {
      const bool one = variant == 1;
      MomentRow row;
      row.variant = one ? "one_sided" : "two_sided";
      row.r = r;
      row.lhs = detail::central_moment_norm(values, nullptr, r, one);
      const auto [norm, se] = detail::root_norm(one ? gplus : gam2, r);
      row.rhs = D * std::sqrt(r) * norm;
      row.rhs_stderr = D * std::sqrt(r) * se;
      std::vector<double> boot(opts.bootstrap);
      std::vector<std::size_t> idx(samples);
      for (std::size_t b = 0; b < opts.bootstrap; ++b) {
        RandomStream rng(seed ^ 0xb0075712a9ULL, b);
        for (auto& i : idx) i = rng.index(samples);
        boot[b] = detail::central_moment_norm(values, &idx, r, one);
      }
      if (!boot.empty()) {
        std::sort(boot.begin(), boot.end());
        const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(boot.size())));
        row.lhs_lower = boot[std::min(k, boot.size() - 1)];
        KahanSum m, m2;
        for (double v : boot) {
          m += v;
          m2 += v * v;
        }
        const double bn = static_cast<double>(boot.size());
        row.lhs_stderr = std::sqrt(std::max(0.0, m2.value() / bn - (m.value() / bn) * (m.value() / bn)));
      } else {
        row.lhs_lower = row.lhs;
      }
      rep.rows.push_back(row);
    }
  }
  return rep;
}

// 2D sqrt(r) (EF)^{a/2} ||G^{1/(2-a)}||_r^{1-a/2} + (2D)^{2/(2-a)} r^{1/(2-a)} ||G^{1/(2-a)}||_r,
// with G_norm = ||G^{1/(2-a)}||_r.
inline double self_bounded_moment_bound(double EF, double G_norm, double alpha, double r) {
  require(alpha >= 0.0 && alpha < 2.0, "self_bounded_moment_bound: alpha must lie in [0,2)");
  require(r >= 2.0, "self_bounded_moment_bound: r must be >= 2");
  require(EF >= 0.0 && G_norm >= 0.0, "self_bounded_moment_bound: EF and the G norm must be nonnegative");
  const double D = poisson_D();
  const double e = 1.0 / (2.0 - alpha);
  return 2.0 * D * std::sqrt(r) * std::pow(EF, 0.5 * alpha) * std::pow(G_norm, 1.0 - 0.5 * alpha) +
         std::pow(2.0 * D, 2.0 * e) * std::pow(r, e) * G_norm;
}

// ============================================================================
// U-statistics
// ============================================================================

using UKernel = std::function<double(std::span<const std::span<const double>>)>;

inline constexpr double kUStatisticCostLimit = 5e7;

// Sum over ordered tuples of pairwise distinct indices.
inline double u_statistic(const UKernel& h, int m, const PointConfiguration& eta) {
  require(m >= 1 && m <= 3, "u_statistic: m must lie in [1,3]");
  const std::size_t n = eta.size();
  require(std::pow(static_cast<double>(n), m) <= kUStatisticCostLimit, "u_statistic: configuration too large for m");
  std::vector<std::span<const double>> args(static_cast<std::size_t>(m));
  KahanSum s;
  std::function<void(int)> rec = [&](int depth) {
    if (depth == m) {
      s += h(args);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      bool used = false;
      for (int d = 0; d < depth; ++d) used = used || args[static_cast<std::size_t>(d)].data() == eta.point(i).data();
      if (used) continue;
      args[static_cast<std::size_t>(depth)] = eta.point(i);
      rec(depth + 1);
    }
  };
  rec(0);
  return s.value();
}

// Kernel h with U = (1/m!) sum^{!=} 1{pairwise within radius}, so U counts edges (m=2) or triangles (m=3).
inline UKernel gilbert_kernel(int m, double radius) {
  require(m == 2 || m == 3, "gilbert_kernel: m must be 2 or 3");
  const double r2 = radius * radius;
  const double w = m == 2 ? 0.5 : 1.0 / 6.0;
  return [r2, w](std::span<const std::span<const double>> x) {
    for (std::size_t a = 0; a < x.size(); ++a)
      for (std::size_t b = a + 1; b < x.size(); ++b)
        if (squared_distance(x[a], x[b]) > r2) return 0.0;
    return w;
  };
}

// sum_i (sum over distinct (m-1)-tuples avoiding i of h(..., X_i))^2.
inline double u_stat_local_square_sum(const UKernel& h, int m, const PointConfiguration& eta) {
  require(m >= 1 && m <= 3, "u_stat_local_square_sum: m must lie in [1,3]");
  const std::size_t n = eta.size();
  KahanSum total;
  std::vector<std::span<const double>> args(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < n; ++i) {
    KahanSum local;
    args[static_cast<std::size_t>(m - 1)] = eta.point(i);
    if (m == 1) {
      local += h(args);
    } else if (m == 2) {
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) {
          args[0] = eta.point(j);
          local += h(args);
        }
    } else {
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k)
          if (j != i && k != i && j != k) {
            args[0] = eta.point(j);
            args[1] = eta.point(k);
            local += h(args);
          }
    }
    total += local.value() * local.value();
  }
  return total.value();
}

// 2 exp(-min(t^2 / (C' m^2 a EU^alpha), t^{2-alpha} / (C' m^2 a))).
inline double u_stat_tail_bound(double EU, int m, double a, double alpha, double t, double C_prime) {
  require(m >= 1, "u_stat_tail_bound: m must be positive");
  require(EU >= 0.0 && a >= 0.0 && t >= 0.0, "u_stat_tail_bound: EU, a and t must be nonnegative");
  require(alpha >= 0.0 && alpha < 2.0, "u_stat_tail_bound: alpha must lie in [0,2)");
  require(C_prime > 0.0, "u_stat_tail_bound: C' must be positive");
  if (t == 0.0) return 2.0;
  const double scale = C_prime * m * m * a;
  if (scale == 0.0) return 0.0;
  const double first = EU > 0.0 ? t * t / (scale * std::pow(EU, alpha)) : std::numeric_limits<double>::infinity();
  return 2.0 * std::exp(-std::min(first, std::pow(t, 2.0 - alpha) / scale));
}

struct UStatTailStudy {
  std::string functional;
  int m = 2;
  double alpha = 0.0;
  double a = 0.0;        // max over samples of local square sum / U^alpha
  double EU = 0.0;
  double C_prime = 0.0;  // smallest value making the bound dominate every empirical tail point
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<TailRow> rows;
};

// Upper tail of a Gilbert U-statistic against the bound, with a and C' read off the samples.
inline UStatTailStudy u_stat_tail_study(const Window& w, int m, double radius, double alpha,
                                        const std::vector<double>& t_grid, std::size_t samples, std::uint64_t seed) {
  w.validate();
  require(samples >= 1, "u_stat_tail_study: need samples");
  const auto h = gilbert_kernel(m, radius);
  std::unique_ptr<PoissonFunctional> F;
  if (m == 2) {
    F = std::make_unique<GilbertEdges>(radius);
  } else {
    F = std::make_unique<GilbertTriangles>(radius);
  }
  UStatTailStudy out;
  out.functional = F->name();
  out.m = m;
  out.alpha = alpha;
  out.samples = samples;
  out.seed = seed;
  std::vector<double> us(samples);
  KahanSum mean_u;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto eta = sample_replica(w, seed, s);
    us[s] = F->evaluate(eta);
    mean_u += us[s];
    if (us[s] > 0.0) out.a = std::max(out.a, u_stat_local_square_sum(h, m, eta) / std::pow(us[s], alpha));
  }
  out.EU = mean_u.value() / static_cast<double>(samples);
  const double scale_unit = m * m * out.a;
  for (double t : t_grid) {
    std::size_t hits = 0;
    for (double u : us) hits += u - out.EU >= t;
    TailRow row;
    row.t = t;
    row.empirical = static_cast<double>(hits) / static_cast<double>(samples);
    row.ci = wilson_interval(hits, samples);
    if (t > 0.0 && scale_unit > 0.0 && row.ci.hi < 2.0) {
      const double eta1 = std::min(out.EU > 0.0 ? t * t / (scale_unit * std::pow(out.EU, alpha))
                                                : std::numeric_limits<double>::infinity(),
                                   std::pow(t, 2.0 - alpha) / scale_unit);
      if (row.ci.hi > 0.0) out.C_prime = std::max(out.C_prime, eta1 / std::log(2.0 / row.ci.hi));
    }
    out.rows.push_back(row);
  }
  if (out.C_prime == 0.0) out.C_prime = 1.0;
  for (auto& row : out.rows) row.bound = u_stat_tail_bound(out.EU, m, out.a, alpha, row.t, out.C_prime);
  return out;
}

// ============================================================================
// Empirical processes
// ============================================================================

enum class EmpiricalMode { Z, S };

using PointFunction = std::function<double(std::span<const double>)>;

struct EmpiricalProcessReport {
  EmpiricalMode mode = EmpiricalMode::Z;
  double r = 2.0;
  double C = 1.0;
  double bound = 0.0;
  double unit_bound = 0.0;  // bound with C = 1
  double mean = 0.0;        // EZ or ES
  double G_norm = 0.0;      // ||sup_x sup_f f(x)||_r (Z) or ||sup_x sup_f |f(x)|||_r (S)
  double Sigma = 0.0;       // S mode only
  double lhs = 0.0;         // Monte Carlo ||(Z - EZ)_+||_r
  std::size_t samples = 0;
};

// Z = sup_f int f d eta over nonnegative f, or S = sup_f int f d(eta - lambda).
inline EmpiricalProcessReport empirical_process_bound(const Window& w, const std::vector<PointFunction>& cls, double r,
                                                      EmpiricalMode mode, double C, std::size_t samples,
                                                      std::uint64_t seed, std::size_t quadrature_points = 100000) {
  w.validate();
  require(!cls.empty(), "empirical_process_bound: empty function class");
  require(r >= (mode == EmpiricalMode::S ? 4.0 : 2.0), "empirical_process_bound: r too small for the mode");
  require(C > 0.0, "empirical_process_bound: C must be positive");
  require(samples >= 2, "empirical_process_bound: need at least two samples");
  const double lam = w.total_intensity();
  std::vector<double> integral(cls.size(), 0.0), integral_sq(cls.size(), 0.0);
  if (mode == EmpiricalMode::S && lam > 0.0) {
    RandomStream rng(seed ^ 0x5eed0fa11ULL, 0);
    std::vector<KahanSum> a(cls.size()), b(cls.size());
    for (std::size_t q = 0; q < quadrature_points; ++q) {
      const auto x = w.uniform_point(rng);
      for (std::size_t j = 0; j < cls.size(); ++j) {
        const double v = cls[j](x);
        a[j] += v;
        b[j] += v * v;
      }
    }
    for (std::size_t j = 0; j < cls.size(); ++j) {
      integral[j] = lam * a[j].value() / static_cast<double>(quadrature_points);
      integral_sq[j] = lam * b[j].value() / static_cast<double>(quadrature_points);
    }
  }
  std::vector<double> zs(samples), gs(samples), sq(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto eta = sample_replica(w, seed, s);
    double z = -std::numeric_limits<double>::infinity(), g = 0.0, q = 0.0;
    for (std::size_t j = 0; j < cls.size(); ++j) {
      double sum = 0.0, sum2 = 0.0;
      for (std::size_t i = 0; i < eta.size(); ++i) {
        const double v = cls[j](eta.point(i));
        if (mode == EmpiricalMode::Z) require(v >= 0.0, "empirical_process_bound: Z mode needs nonnegative functions");
        sum += v;
        sum2 += v * v;
        g = std::max(g, mode == EmpiricalMode::Z ? v : std::abs(v));
      }
      z = std::max(z, sum - integral[j]);
      q = std::max(q, sum2);
    }
    zs[s] = z;
    gs[s] = g;
    sq[s] = q;
  }
  EmpiricalProcessReport rep;
  rep.mode = mode;
  rep.r = r;
  rep.C = C;
  rep.samples = samples;
  const double n = static_cast<double>(samples);
  KahanSum mz, mg, msq;
  for (std::size_t s = 0; s < samples; ++s) {
    mz += zs[s];
    mg += std::pow(gs[s], r);
    msq += sq[s];
  }
  rep.mean = mz.value() / n;
  rep.G_norm = std::pow(mg.value() / n, 1.0 / r);
  KahanSum ml;
  for (double z : zs) ml += std::pow(positive_part(z - rep.mean), r);
  rep.lhs = std::pow(ml.value() / n, 1.0 / r);
  if (mode == EmpiricalMode::Z) {
    rep.unit_bound = std::sqrt(r) * std::sqrt(std::max(0.0, rep.mean)) * std::sqrt(rep.G_norm) + r * rep.G_norm;
  } else {
    const double sup_sq = *std::max_element(integral_sq.begin(), integral_sq.end());
    rep.Sigma = std::sqrt(sup_sq + msq.value() / n);
    rep.unit_bound = std::sqrt(r) * rep.Sigma + r * rep.G_norm;
  }
  rep.bound = C * rep.unit_bound;
  return rep;
}

// ============================================================================
// Sampler diagnostics
// ============================================================================

struct CountStatistics {
  double mean = 0.0;
  double variance = 0.0;
  double mean_stderr = 0.0;
  double variance_stderr = 0.0;
  double ks_statistic = 0.0;  // standardized counts vs normal, at half-integer points
  double ks_threshold = 0.0;  // 1.36 / sqrt(n)
  std::size_t samples = 0;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline CountStatistics count_statistics(const Window& w, std::size_t samples, std::uint64_t seed) {
  w.validate();
  require(samples >= 2, "count_statistics: need at least two samples");
  std::vector<std::uint64_t> counts(samples);
  for (std::size_t s = 0; s < samples; ++s) counts[s] = sample_replica(w, seed, s).size();
  CountStatistics st;
  st.samples = samples;
  const double n = static_cast<double>(samples);
  KahanSum m;
  for (auto c : counts) m += static_cast<double>(c);
  st.mean = m.value() / n;
  KahanSum m2, m4;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - st.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  st.variance = m2.value() / (n - 1.0);
  st.mean_stderr = std::sqrt(st.variance / n);
  const double mu4 = m4.value() / n;
  st.variance_stderr = std::sqrt(std::max(0.0, mu4 - st.variance * st.variance) / n);
  const double lam = w.total_intensity();
  if (lam > 0.0) {
    std::sort(counts.begin(), counts.end());
    std::size_t j = 0;
    for (std::uint64_t k = counts.front(); k <= counts.back(); ++k) {
      while (j < counts.size() && counts[j] <= k) ++j;
      const double emp = static_cast<double>(j) / n;
      const double th = normal_cdf((static_cast<double>(k) + 0.5 - lam) / std::sqrt(lam));
      st.ks_statistic = std::max(st.ks_statistic, std::abs(emp - th));
    }
  }
  st.ks_threshold = 1.36 / std::sqrt(n);
  return st;
}

}  // namespace fineq
