#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "common.hpp"
#include "models.hpp"
#include "rng.hpp"

namespace fineq {

// ============================================================================
// Tensors and partitions
// ============================================================================

inline std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// Dense d-indexed array over [n]^d, row-major.
struct IndexedTensor {
  int order = 1;
  std::size_t dim = 0;
  std::vector<double> entries;

  IndexedTensor() = default;
  IndexedTensor(int d, std::size_t n) : order(d), dim(n), entries(ipow(n, d), 0.0) { validate(); }
  IndexedTensor(int d, std::size_t n, std::vector<double> e) : order(d), dim(n), entries(std::move(e)) { validate(); }

  void validate() const {
    require(order >= 1 && order <= 4, "IndexedTensor: order must lie in [1,4]");
    require(dim >= 1, "IndexedTensor: dimension must be positive");
    require(entries.size() == ipow(dim, order), "IndexedTensor: entry count must equal n^d");
    for (double v : entries) require(std::isfinite(v), "IndexedTensor: entries must be finite");
  }
  std::size_t size() const { return entries.size(); }
  std::size_t index(const std::vector<std::size_t>& i) const {
    std::size_t k = 0;
    for (std::size_t t = 0; t < i.size(); ++t) k = k * dim + i[t];
    return k;
  }
  double& at(const std::vector<std::size_t>& i) { return entries[index(i)]; }
  double at(const std::vector<std::size_t>& i) const { return entries[index(i)]; }
  std::vector<std::size_t> multi_index(std::size_t k) const {
    std::vector<std::size_t> i(static_cast<std::size_t>(order));
    for (std::size_t t = i.size(); t-- > 0;) {
      i[t] = k % dim;
      k /= dim;
    }
    return i;
  }
  double frobenius() const {
    KahanSum s;
    for (double v : entries) s += v * v;
    return std::sqrt(s.value());
  }
};

// Blocks hold 0-based axis indices.
struct Partition {
  std::vector<std::vector<int>> blocks;

  std::size_t size() const { return blocks.size(); }
  void validate(int d) const {
    std::vector<int> seen(static_cast<std::size_t>(d), 0);
    require(!blocks.empty(), "Partition: no blocks");
    for (const auto& b : blocks) {
      require(!b.empty(), "Partition: empty block");
      for (int a : b) {
        require(a >= 0 && a < d, "Partition: axis out of range");
        require(!seen[static_cast<std::size_t>(a)]++, "Partition: blocks overlap");
      }
    }
    for (int s : seen) require(s == 1, "Partition: blocks do not cover all axes");
  }
  std::string to_string() const {
    std::string out;
    for (const auto& b : blocks) {
      out += "{";
      for (std::size_t i = 0; i < b.size(); ++i) out += (i ? "," : "") + std::to_string(b[i] + 1);
      out += "}";
    }
    return out;
  }
};

// Set partitions of {0..d-1} via restricted growth strings.
inline std::vector<Partition> enumerate_partitions(int d) {
  require(d >= 1 && d <= 4, "enumerate_partitions: d must lie in [1,4]");
  std::vector<Partition> out;
  std::vector<int> a(static_cast<std::size_t>(d), 0);
  std::function<void(int, int)> rec = [&](int i, int maxv) {
    if (i == d) {
      Partition p;
      p.blocks.assign(static_cast<std::size_t>(maxv + 1), {});
      for (int t = 0; t < d; ++t) p.blocks[static_cast<std::size_t>(a[static_cast<std::size_t>(t)])].push_back(t);
      out.push_back(p);
      return;
    }
    for (int v = 0; v <= maxv + 1; ++v) {
      a[static_cast<std::size_t>(i)] = v;
      rec(i + 1, std::max(maxv, v));
    }
  };
  a[0] = 0;
  rec(1, 0);
  return out;
}

// ============================================================================
// Partition norms
// ============================================================================

struct NormOptions {
  int starts = 64;
  int max_sweeps = 20000;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
};

struct PartitionNormResult {
  double value = 0.0;
  std::string method;
  bool lower_bound = false;  // value is attained by explicit unit vectors
  double upper_bound = 0.0;  // Frobenius norm
  int sweeps = 0;
  bool converged = true;
  std::vector<std::vector<double>> vectors;  // maximizing unit vectors per block
};

namespace detail {

// block_index[l][k]: position of multi-index k inside the flattened block l.
inline std::vector<std::vector<std::size_t>> block_indices(const IndexedTensor& a, const Partition& part) {
  std::vector<std::vector<std::size_t>> out(part.size(), std::vector<std::size_t>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto i = a.multi_index(k);
    for (std::size_t l = 0; l < part.size(); ++l) {
      std::size_t p = 0;
      for (int ax : part.blocks[l]) p = p * a.dim + i[static_cast<std::size_t>(ax)];
      out[l][k] = p;
    }
  }
  return out;
}

inline double normalize(std::vector<double>& v) {
  KahanSum s;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s.value());
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
  return n;
}

}  // namespace detail

// Block-coordinate ascent: each block update is the exact maximizer given the others.
inline PartitionNormResult alternating_maximization(const IndexedTensor& a, const Partition& part,
                                                    const NormOptions& opts = {}) {
  a.validate();
  part.validate(a.order);
  const auto bidx = detail::block_indices(a, part);
  const std::size_t k = part.size();
  std::vector<std::size_t> bsize(k);
  for (std::size_t l = 0; l < k; ++l) bsize[l] = ipow(a.dim, static_cast<int>(part.blocks[l].size()));

  PartitionNormResult best;
  best.method = "alternating";
  best.lower_bound = true;
  best.upper_bound = a.frobenius();
  best.value = -1.0;
  best.converged = false;
  for (int s = 0; s < std::max(1, opts.starts); ++s) {
    RandomStream rng(opts.seed, static_cast<std::uint64_t>(s));
    std::vector<std::vector<double>> x(k);
    for (std::size_t l = 0; l < k; ++l) {
      x[l].resize(bsize[l]);
      for (double& v : x[l]) v = rng.normal();
      detail::normalize(x[l]);
    }
    double value = 0.0;
    int quiet = 0;
    int sweep = 0;
    bool converged = false;
    for (; sweep < opts.max_sweeps; ++sweep) {
      double v = 0.0;
      for (std::size_t l = 0; l < k; ++l) {
        std::vector<double> y(bsize[l], 0.0);
        for (std::size_t t = 0; t < a.size(); ++t) {
          const double e = a.entries[t];
          if (e == 0.0) continue;
          double prod = e;
          for (std::size_t m = 0; m < k; ++m) {
            if (m != l) prod *= x[m][bidx[m][t]];
          }
          y[bidx[l][t]] += prod;
        }
        v = detail::normalize(y);
        if (v == 0.0) break;  // zero tensor or a degenerate start
        x[l] = std::move(y);
      }
      const double improvement = value > 0.0 ? (v - value) / value : 1.0;
      value = v;
      if (v == 0.0) {
        converged = true;
        break;
      }
      quiet = improvement < opts.tolerance ? quiet + 1 : 0;
      if (quiet >= 3) {
        converged = true;
        ++sweep;
        break;
      }
    }
    bool better = value > best.value;
    if (value == best.value) {
      // Deterministic tie-break on the concatenated vectors.
      std::vector<double> lhs, rhs;
      for (const auto& v : x) lhs.insert(lhs.end(), v.begin(), v.end());
      for (const auto& v : best.vectors) rhs.insert(rhs.end(), v.begin(), v.end());
      better = lhs < rhs;
    }
    if (better) {
      best.value = value;
      best.vectors = x;
      best.converged = converged;
    }
    best.sweeps += sweep;
  }
  best.value = std::max(0.0, best.value);
  return best;
}

inline double spectral_norm(const IndexedTensor& a) {
  require(a.order == 2, "spectral_norm: matrix expected");
  const auto n = static_cast<Eigen::Index>(a.dim);
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a.entries[static_cast<std::size_t>(i * n + j)];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

inline PartitionNormResult partition_norm(const IndexedTensor& a, const Partition& part, const NormOptions& opts = {}) {
  a.validate();
  part.validate(a.order);
  if (part.size() == 1) {
    PartitionNormResult r;
    r.value = a.frobenius();
    r.upper_bound = r.value;
    r.method = "frobenius";
    return r;
  }
  if (a.order == 2) {
    PartitionNormResult r;
    r.value = spectral_norm(a);
    r.upper_bound = a.frobenius();
    r.method = "svd";
    return r;
  }
  return alternating_maximization(a, part, opts);
}

inline double partition_norm_value(const IndexedTensor& a, const Partition& part, const NormOptions& opts = {}) {
  return partition_norm(a, part, opts).value;
}

// ============================================================================
// Gaussian chaos
// ============================================================================

// C_k sum over partitions of r^{|I|/2} ||A||_I.
inline double chaos_moment_bound(const IndexedTensor& a, double r, double C_k, const NormOptions& opts = {}) {
  require(r >= 2.0, "chaos_moment_bound: r must be >= 2");
  require(C_k > 0.0, "chaos_moment_bound: C_k must be positive");
  KahanSum s;
  for (const auto& p : enumerate_partitions(a.order)) {
    s += std::pow(r, 0.5 * static_cast<double>(p.size())) * partition_norm_value(a, p, opts);
  }
  return C_k * s.value();
}

// ||g||_r for a standard Gaussian g.
inline double gaussian_abs_moment_norm(double r) {
  const double log_m = 0.5 * r * std::log(2.0) + std::lgamma(0.5 * (r + 1.0)) - 0.5 * std::log(std::numbers::pi);
  return std::exp(log_m / r);
}

struct ChaosMoment {
  double r = 0.0;
  double norm = 0.0;      // (mean |X|^r)^{1/r}
  double upper_ci = 0.0;  // from the upper confidence limit of mean |X|^r
  double stderr_raw = 0.0;
};

// Monte Carlo moments of <A, G_1 x ... x G_d> with independent standard Gaussian vectors.
inline std::vector<ChaosMoment> chaos_moments_mc(const IndexedTensor& a, const std::vector<double>& r_values,
                                                 std::size_t samples, std::uint64_t seed, double z = 3.0) {
  require(samples >= 2, "chaos_moments_mc: need at least two samples");
  const std::size_t n = a.dim;
  std::vector<double> xs(samples);
  std::vector<double> g(n * static_cast<std::size_t>(a.order));
  for (std::size_t b = 0; b * 4096 < samples; ++b) {
    RandomStream rng(seed, b);
    for (std::size_t s = b * 4096; s < std::min(samples, (b + 1) * 4096); ++s) {
      for (double& v : g) v = rng.normal();
      // Contract the last axis first.
      std::vector<double> cur = a.entries;
      for (int ax = a.order - 1; ax >= 0; --ax) {
        std::vector<double> next(cur.size() / n, 0.0);
        const double* gv = &g[static_cast<std::size_t>(ax) * n];
        for (std::size_t i = 0; i < next.size(); ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += cur[i * n + j] * gv[j];
          next[i] = acc;
        }
        cur = std::move(next);
      }
      xs[s] = cur[0];
    }
  }
  std::vector<ChaosMoment> out;
  const double cnt = static_cast<double>(samples);
  for (double r : r_values) {
    KahanSum m, m2;
    for (double x : xs) {
      const double v = std::pow(std::abs(x), r);
      m += v;
      m2 += v * v;
    }
    const double mean_v = m.value() / cnt;
    const double var = std::max(0.0, m2.value() / cnt - mean_v * mean_v) * cnt / (cnt - 1.0);
    ChaosMoment c;
    c.r = r;
    c.stderr_raw = std::sqrt(var / cnt);
    c.norm = std::pow(mean_v, 1.0 / r);
    c.upper_ci = std::pow(mean_v + z * c.stderr_raw, 1.0 / r);
    out.push_back(c);
  }
  return out;
}

struct ChaosCalibration {
  double constant = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<double> r_values;
  std::vector<double> ratios;  // upper-CI moment / unit-constant bound, per (case, r)
  std::string family;
};

// Smallest C_k with C_k * sum_I r^{|I|/2} ||A||_I >= upper-CI Monte Carlo moment on the family.
inline ChaosCalibration calibrate_chaos_constant(const std::vector<IndexedTensor>& family,
                                                 const std::vector<double>& r_values, std::size_t samples,
                                                 std::uint64_t seed, const std::string& name = "custom") {
  require(!family.empty(), "calibrate_chaos_constant: empty family");
  ChaosCalibration cal;
  cal.samples = samples;
  cal.seed = seed;
  cal.r_values = r_values;
  cal.family = name;
  for (std::size_t c = 0; c < family.size(); ++c) {
    const auto mom = chaos_moments_mc(family[c], r_values, samples, mix64(seed + c));
    for (const auto& m : mom) {
      const double unit = chaos_moment_bound(family[c], m.r, 1.0);
      const double ratio = unit > 0.0 ? m.upper_ci / unit : 0.0;
      cal.ratios.push_back(ratio);
      cal.constant = std::max(cal.constant, ratio);
    }
  }
  return cal;
}

// Seeded n x n Gaussian matrices.
inline std::vector<IndexedTensor> seeded_quadratic_family(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::vector<IndexedTensor> out;
  for (std::size_t c = 0; c < count; ++c) {
    RandomStream rng(seed, c);
    IndexedTensor a(2, n);
    for (double& v : a.entries) v = rng.normal();
    out.push_back(std::move(a));
  }
  return out;
}

// ============================================================================
// Tail calculators
// ============================================================================

struct TailParameters {
  double M = 1.0;
  double gamma = 0.5;
  int d = 1;
  std::vector<IndexedTensor> expected;  // E D^k f for k = 1..d-1
  std::vector<IndexedTensor> top;       // D^d f at the states whose sup is taken
};

inline double higher_order_eta(const TailParameters& prm, double t, const NormOptions& opts = {}) {
  require(t > 0.0, "higher_order_tail: t must be positive");
  require(prm.M > 0.0 && prm.gamma >= 0.0, "higher_order_tail: need M > 0 and gamma >= 0");
  require(prm.d >= 1 && prm.d <= 4, "higher_order_tail: d must lie in [1,4]");
  require(prm.expected.size() == static_cast<std::size_t>(prm.d - 1), "higher_order_tail: need E D^k f for k < d");
  require(!prm.top.empty(), "higher_order_tail: missing D^d f tensors");
  double eta = std::numeric_limits<double>::infinity();
  auto term = [&](double norm, int k, std::size_t blocks) {
    const double den = (2.0 * prm.gamma - 1.0) * k + static_cast<double>(blocks);
    require(den > 0.0, "higher_order_tail: nonpositive exponent denominator");
    if (norm <= 0.0) return;
    eta = std::min(eta, std::pow(t / (std::pow(prm.M, k) * norm), 2.0 / den));
  };
  for (const auto& p : enumerate_partitions(prm.d)) {
    double sup = 0.0;
    for (const auto& a : prm.top) {
      require(a.order == prm.d, "higher_order_tail: top tensor has wrong order");
      sup = std::max(sup, partition_norm_value(a, p, opts));
    }
    term(sup, prm.d, p.size());
  }
  for (int k = 1; k < prm.d; ++k) {
    const auto& a = prm.expected[static_cast<std::size_t>(k - 1)];
    require(a.order == k, "higher_order_tail: expected tensor has wrong order");
    for (const auto& p : enumerate_partitions(k)) term(partition_norm_value(a, p, opts), k, p.size());
  }
  return eta;
}

inline double higher_order_tail(const TailParameters& prm, double t, double C_prime, const NormOptions& opts = {}) {
  require(C_prime > 0.0, "higher_order_tail: C' must be positive");
  return 2.0 * std::exp(-higher_order_eta(prm, t, opts) / C_prime);
}

// min over k, J of ((rho0^{k/2} t) / ||E grad^k f||_J)^{2/|J|}.
inline double polynomial_tail_eta(double rho0, const std::vector<IndexedTensor>& grads, double t,
                                  const NormOptions& opts = {}) {
  require(t > 0.0, "polynomial_tail_bound: t must be positive");
  require(rho0 > 0.0, "polynomial_tail_bound: rho0 must be positive");
  double eta = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    require(grads[i].order == k, "polynomial_tail_bound: gradient k must have order k");
    for (const auto& p : enumerate_partitions(k)) {
      const double nrm = partition_norm_value(grads[i], p, opts);
      if (nrm <= 0.0) continue;
      eta = std::min(eta, std::pow(std::pow(rho0, 0.5 * k) * t / nrm, 2.0 / static_cast<double>(p.size())));
    }
  }
  return eta;
}

inline double polynomial_tail_bound(double rho0, const std::vector<IndexedTensor>& grads, double t, double C_d,
                                    const NormOptions& opts = {}) {
  require(C_d > 0.0, "polynomial_tail_bound: C_d must be positive");
  return 2.0 * std::exp(-polynomial_tail_eta(rho0, grads, t, opts) / C_d);
}

// Expected gradients of the triangle count over the C(n,2) edge variables,
// with A = E X_e and B = E X_e X_f for edges sharing a vertex.
inline std::vector<IndexedTensor> triangle_count_expected_gradients(std::size_t vertices, double A, double B) {
  require(vertices >= 3, "triangle_count_expected_gradients: need at least 3 vertices");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t a = 0; a < vertices; ++a)
    for (std::size_t b = a + 1; b < vertices; ++b) edges.emplace_back(a, b);
  const std::size_t N = edges.size();
  auto shared = [&](std::size_t e, std::size_t f) {
    const auto [a, b] = edges[e];
    const auto [c, d] = edges[f];
    return e != f && (a == c || a == d || b == c || b == d);
  };
  auto triangle = [&](std::size_t e, std::size_t f, std::size_t g) {
    if (e == f || f == g || e == g) return false;
    std::vector<std::size_t> v{edges[e].first, edges[e].second, edges[f].first,
                               edges[f].second, edges[g].first, edges[g].second};
    std::sort(v.begin(), v.end());
    return v[0] == v[1] && v[2] == v[3] && v[4] == v[5] && v[1] != v[2] && v[3] != v[4];
  };
  IndexedTensor g1(1, N), g2(2, N), g3(3, N);
  for (std::size_t e = 0; e < N; ++e) g1.entries[e] = static_cast<double>(vertices - 2) * B;
  for (std::size_t e = 0; e < N; ++e)
    for (std::size_t f = 0; f < N; ++f) g2.at({e, f}) = shared(e, f) ? A : 0.0;
  for (std::size_t e = 0; e < N; ++e)
    for (std::size_t f = 0; f < N; ++f)
      for (std::size_t g = 0; g < N; ++g) g3.at({e, f, g}) = triangle(e, f, g) ? 1.0 : 0.0;
  return {g1, g2, g3};
}

// min(t^2 / (n^3 (rho0^-3 + rho0^-2 A^2) + n^4 rho0^-1 B^2), t / (sqrt(n) rho0^-3/2 + n rho0^-1 A), t^{2/3} rho0).
inline double triangle_count_eta(double n, double rho0, double A, double B, double t) {
  const double v = n * n * n * (std::pow(rho0, -3.0) + std::pow(rho0, -2.0) * A * A) + std::pow(n, 4.0) / rho0 * B * B;
  const double l = std::sqrt(n) * std::pow(rho0, -1.5) + n / rho0 * A;
  return std::min({t * t / v, t / l, std::pow(t, 2.0 / 3.0) * rho0});
}

// ============================================================================
// Discrete gradients on binary product spaces
// ============================================================================

// Oriented-edge gradients along coordinate flips with orientation t = max, s = min.
class CubeGradient {
 public:
  // weighted: multiply each difference by sqrt(max(Q(s->t), Q(t->s))).
  CubeGradient(const ModelBundle& b, bool weighted) : b_(b), weighted_(weighted) {
    require(!b.configs.empty(), "CubeGradient: bundle has no configurations");
    n_ = b.configs[0].size();
    for (std::size_t s = 0; s < b.configs.size(); ++s) {
      for (int v : b.configs[s]) require(v == 0 || v == 1, "CubeGradient: binary alphabet required");
      index_.emplace(b.configs[s], s);
    }
    require(index_.size() == ipow(2, static_cast<int>(n_)), "CubeGradient: full cube support required");
    flip_.assign(b.configs.size(), std::vector<std::size_t>(n_));
    w_.assign(b.configs.size(), std::vector<double>(n_, 1.0));
    for (std::size_t s = 0; s < b.configs.size(); ++s) {
      for (std::size_t i = 0; i < n_; ++i) {
        auto c = b.configs[s];
        c[i] = 1 - c[i];
        const std::size_t t = index_.at(c);
        flip_[s][i] = t;
        if (weighted_) w_[s][i] = std::sqrt(std::max(b.kernel.rate(s, t), b.kernel.rate(t, s)));
      }
    }
  }

  std::size_t sites() const { return n_; }
  std::size_t states() const { return flip_.size(); }

  ScalarField apply(std::size_t i, const ScalarField& h) const {
    ScalarField out(h.size());
    for (std::size_t s = 0; s < h.size(); ++s) {
      const std::size_t t = flip_[s][i];
      const bool top = b_.configs[s][i] == 1;
      out[s] = (top ? h[s] - h[t] : h[t] - h[s]) * w_[s][i];
    }
    return out;
  }

  // D^k f as one tensor per state.
  std::vector<IndexedTensor> derivative(const ScalarField& f, int k) const {
    require(k >= 1 && k <= 4, "CubeGradient: order must lie in [1,4]");
    std::vector<IndexedTensor> out(states(), IndexedTensor(k, n_));
    const std::size_t total = ipow(n_, k);
    for (std::size_t m = 0; m < total; ++m) {
      const auto idx = out[0].multi_index(m);
      ScalarField h = f;
      for (std::size_t t = idx.size(); t-- > 0;) h = apply(idx[t], h);
      for (std::size_t s = 0; s < states(); ++s) out[s].entries[m] = h[s];
    }
    return out;
  }

  IndexedTensor expected_derivative(const ScalarField& f, int k) const {
    auto all = derivative(f, k);
    IndexedTensor e(k, n_);
    for (std::size_t m = 0; m < e.size(); ++m) {
      KahanSum s;
      for (std::size_t x = 0; x < states(); ++x) s += b_.space().mu(x) * all[x].entries[m];
      e.entries[m] = s.value();
    }
    return e;
  }

 private:
  const ModelBundle& b_;
  bool weighted_;
  std::size_t n_ = 0;
  std::map<std::vector<int>, std::size_t> index_;
  std::vector<std::vector<std::size_t>> flip_;
  std::vector<std::vector<double>> w_;
};

struct DecompositionTerms {
  double r = 0.0;
  double exact = 0.0;            // ||f - Ef||_r
  std::vector<double> unit;      // per order k = 1..d, with C = C_chaos = 1
};

// Right side of the moment decomposition split by order, with unit constants:
// unit[k-1] = K^k r^{-k/2} sum_J r^{|J|/2} ||E D^k f||_J for k < d,
// unit[d-1] = K^d r^{-d/2} || sum_J r^{|J|/2} ||D^d f(X)||_J ||_r, K = M r^gamma.
inline DecompositionTerms moment_decomposition_terms(const ModelBundle& b, const ScalarField& f, double M, double gamma,
                                                     double r, int d, bool weighted = true,
                                                     const NormOptions& opts = {}) {
  require(r >= 2.0, "moment_decomposition_bound: r must be >= 2");
  require(d >= 1 && d <= 4, "moment_decomposition_bound: d must lie in [1,4]");
  require(b.space().size() <= 4096, "moment_decomposition_bound: model too large");
  CubeGradient grad(b, weighted);
  DecompositionTerms out;
  out.r = r;
  out.exact = lr_norm(b.space(), [&] {
    const double m = mean(b.space(), f);
    ScalarField c(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) c[i] = f[i] - m;
    return c;
  }(), r);
  const double K = M * std::pow(r, gamma);
  for (int k = 1; k < d; ++k) {
    const auto e = grad.expected_derivative(f, k);
    KahanSum s;
    for (const auto& p : enumerate_partitions(k)) s += std::pow(r, 0.5 * p.size()) * partition_norm_value(e, p, opts);
    out.unit.push_back(std::pow(K, k) * std::pow(r, -0.5 * k) * s.value());
  }
  const auto top = grad.derivative(f, d);
  ScalarField per_state(top.size());
  for (std::size_t x = 0; x < top.size(); ++x) {
    KahanSum s;
    for (const auto& p : enumerate_partitions(d)) s += std::pow(r, 0.5 * p.size()) * partition_norm_value(top[x], p, opts);
    per_state[x] = s.value();
  }
  out.unit.push_back(std::pow(K, d) * std::pow(r, -0.5 * d) * lr_norm(b.space(), per_state, r));
  return out;
}

// sum_k C^k C_chaos unit_k.
inline double moment_decomposition_bound(const DecompositionTerms& terms, double C, double C_chaos) {
  KahanSum s;
  for (std::size_t i = 0; i < terms.unit.size(); ++i) s += std::pow(C, static_cast<double>(i + 1)) * C_chaos * terms.unit[i];
  return s.value();
}

// Smallest C (with the given C_chaos) making the bound dominate every exact moment in the family.
inline double calibrate_decomposition_constant(const std::vector<DecompositionTerms>& family, double C_chaos = 1.0) {
  require(!family.empty(), "calibrate_decomposition_constant: empty family");
  double lo = 0.0, hi = 1.0;
  auto ok = [&](double C) {
    for (const auto& t : family) {
      if (moment_decomposition_bound(t, C, C_chaos) < t.exact) return false;
    }
    return true;
  };
  while (!ok(hi)) {
    hi *= 2.0;
    require(hi < 1e12, "calibrate_decomposition_constant: no finite constant dominates the family");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace fineq
