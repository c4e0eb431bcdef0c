#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "dirichlet.hpp"
#include "finite_space.hpp"
#include "models.hpp"
#include "rng.hpp"

namespace fineq {

// ============================================================================
// Constants
// ============================================================================

inline double kappa(double s) {
  if (!(s >= 0.0)) throw InvalidArgument("kappa: s must be >= 0");
  return 1.0 / (-std::expm1(-(s + 1.0) / 2.0));
}

// sqrt(sqrt(e)/(sqrt(e)-1)), the symmetric-group moment constant; D^2 = kappa(0).
inline double symmetric_group_D() { return std::sqrt(kappa(0.0)); }

// sqrt(3 sqrt(e)/(sqrt(e)-1)), the Poisson and product-space constant.
inline double poisson_D() { return std::sqrt(3.0 * kappa(0.0)); }

// K = sqrt(3 sqrt(e) / (rho0 (sqrt(e)-1))) for Glauber dynamics with mLSI constant rho0.
inline double glauber_K(double rho0) {
  require(rho0 > 0.0, "glauber_K: rho0 must be positive");
  return std::sqrt(3.0 * kappa(0.0) / rho0);
}

// alpha_p >= a (p-1)^s, optionally only for p >= p0.
struct BecknerRegime {
  double a = 1.0;
  double s = 0.0;
  std::optional<double> p0;
  std::string provenance = "caller";

  void validate() const {
    require(a > 0.0 && std::isfinite(a), "BecknerRegime: a must be positive");
    require(s >= 0.0, "BecknerRegime: s must be >= 0");
    if (p0) require(*p0 > 1.0 && *p0 <= 2.0, "BecknerRegime: p0 must lie in (1,2]");
  }
  bool recommended() const { return s <= 1.0; }
  std::optional<double> r_max() const {
    if (!p0) return std::nullopt;
    return *p0 / (*p0 - 1.0);
  }
};

// ============================================================================
// Reports
// ============================================================================

struct MomentRow {
  std::string variant;
  double r = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs_stderr = 0.0;
  double lhs_lower = 0.0;  // lower confidence limit of lhs (Monte Carlo only)
  double margin() const { return rhs - lhs; }
};

struct MomentCheckReport {
  std::string name;
  std::string method = "exact";
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  std::optional<BecknerRegime> regime;
  std::vector<MomentRow> rows;
  std::vector<std::string> citations;

  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) m = std::min(m, r.margin());
    return m;
  }
  bool passed(double tol = 1e-10) const {
    for (const auto& r : rows) {
      if (method == "exact" && r.margin() < -tol) return false;
      if (method != "exact" && r.rhs < r.lhs_lower - tol) return false;
    }
    return true;
  }
};

inline void validate_r_values(const std::vector<double>& rs, const BecknerRegime* regime = nullptr) {
  require(!rs.empty(), "moment check: empty r list");
  for (double r : rs) {
    require(r >= 2.0 && std::isfinite(r), "moment check: every r must be >= 2");
    if (regime && regime->r_max() && r > *regime->r_max() + 1e-12) {
      throw InvalidArgument("moment check: r = " + std::to_string(r) +
                            " exceeds p0/(p0-1); a Beckner regime restricted to p >= p0 gives moments only for "
                            "2 <= r <= p0/(p0-1)");
    }
  }
}

// ============================================================================
// Exact checks on a kernel
// ============================================================================

inline ScalarField centered(const FiniteSpace& space, const ScalarField& f) {
  const double m = mean(space, f);
  ScalarField out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] - m;
  return out;
}

inline ScalarField positive_part(ScalarField f) {
  for (double& v : f) v = positive_part(v);
  return f;
}

inline ScalarField negated(ScalarField f) {
  for (double& v : f) v = -v;
  return f;
}

// Checks ||(f - mu f)_+||_r^2 <= (1 - 2^{-(s+1)}) (r^{s+1}/a) kappa(s) ||Gamma_+(f)||_{r/2}
// for f and for -f.
inline MomentCheckReport check_onesided_moments(const Kernel& k, const ScalarField& f, const BecknerRegime& regime,
                                                const std::vector<double>& r_values) {
  regime.validate();
  validate_r_values(r_values, &regime);
  k.space().check_field(f);
  MomentCheckReport rep;
  rep.name = "onesided_moments";
  rep.regime = regime;
  rep.citations.push_back("||(f-mu f)_+||_r^2 <= (1-2^{-(s+1)}) (r^{s+1}/a) kappa(s) ||Gamma_+(f)||_{r/2}");
  const double c = -std::expm1(-(regime.s + 1.0) * std::log(2.0)) * kappa(regime.s) / regime.a;
  for (const auto& [variant, g] : {std::pair<std::string, ScalarField>{"f", f}, {"-f", negated(f)}}) {
    const auto up = positive_part(centered(k.space(), g));
    const auto gp = gamma_plus(k, g);
    for (double r : r_values) {
      MomentRow row;
      row.variant = variant;
      row.r = r;
      const double l = lr_norm(k.space(), up, r);
      row.lhs = l * l;
      row.rhs = c * std::pow(r, regime.s + 1.0) * lr_norm(k.space(), gp, std::max(1.0, r / 2.0));
      rep.rows.push_back(row);
    }
  }
  return rep;
}

// Checks ||f - mu f||_r^2 <= (r^{s+1} kappa(s)/a) ||Gamma(f)||_{r/2}.
inline MomentCheckReport check_twosided_moments(const Kernel& k, const ScalarField& f, const BecknerRegime& regime,
                                                const std::vector<double>& r_values) {
  regime.validate();
  validate_r_values(r_values, &regime);
  k.space().check_field(f);
  MomentCheckReport rep;
  rep.name = "twosided_moments";
  rep.regime = regime;
  rep.citations.push_back("||f-mu f||_r^2 <= (r^{s+1} kappa(s)/a) ||Gamma(f)||_{r/2}");
  const auto c = centered(k.space(), f);
  const auto gam = carre_du_champ(k, f, f);
  for (double r : r_values) {
    MomentRow row;
    row.variant = "f";
    row.r = r;
    const double l = lr_norm(k.space(), c, r);
    row.lhs = l * l;
    row.rhs = std::pow(r, regime.s + 1.0) * kappa(regime.s) / regime.a * lr_norm(k.space(), gam, std::max(1.0, r / 2.0));
    rep.rows.push_back(row);
  }
  // With s = 1 the r = 2 row is a weak Poincare inequality; the sharp one is recorded too.
  if (regime.s == 1.0 && std::find(r_values.begin(), r_values.end(), 2.0) != r_values.end()) {
    MomentRow row;
    row.variant = "poincare_sharp";
    row.r = 2.0;
    row.lhs = variance(k.space(), f);
    row.rhs = dirichlet_form(k, f, f) / regime.a;
    rep.rows.push_back(row);
    rep.citations.push_back("lambda Var(f) <= E(f,f)");
  }
  return rep;
}

// ============================================================================
// Symmetric group
// ============================================================================

inline std::map<std::vector<int>, std::size_t> permutation_index(const std::vector<std::vector<int>>& perms) {
  std::map<std::vector<int>, std::size_t> idx;
  for (std::size_t s = 0; s < perms.size(); ++s) idx.emplace(perms[s], s);
  return idx;
}

// f is indexed by permutations in lexicographic order (see all_permutations).
inline MomentCheckReport symmetric_group_moment_check(std::size_t n, const ScalarField& f,
                                                      const std::vector<double>& r_values) {
  require(n >= 2 && n <= 6, "symmetric_group_moment_check: n must lie in [2,6]");
  validate_r_values(r_values);
  const auto perms = all_permutations(n);
  require(f.size() == perms.size(), "symmetric_group_moment_check: f must have n! entries");
  const auto idx = permutation_index(perms);
  auto space = FiniteSpace::uniform(perms.size());
  const double nn = static_cast<double>(n);
  ScalarField v(f.size(), 0.0), vp(f.size(), 0.0);
  for (std::size_t s = 0; s < perms.size(); ++s) {
    KahanSum a, b;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        auto t = perms[s];
        std::swap(t[i], t[j]);
        const double d = f[s] - f[idx.at(t)];
        a += d * d;
        b += positive_part(d) * positive_part(d);
      }
    }
    v[s] = std::sqrt(a.value() / (nn + 2.0));
    vp[s] = std::sqrt(b.value() / (nn + 2.0));
  }
  const double D = symmetric_group_D();
  const auto c = centered(space, f);
  const auto cp = positive_part(c);
  MomentCheckReport rep;
  rep.name = "symmetric_group_moments";
  rep.citations.push_back("||f-Ef||_r <= D sqrt(r) ||((1/(n+2)) sum_{i,j} (f(s)-f(s t_ij))^2)^{1/2}||_r");
  rep.citations.push_back("one-sided version with (.)_+");
  for (double r : r_values) {
    rep.rows.push_back({"two_sided", r, lr_norm(space, c, r), D * std::sqrt(r) * lr_norm(space, v, r)});
    rep.rows.push_back({"one_sided", r, lr_norm(space, cp, r), D * std::sqrt(r) * lr_norm(space, vp, r)});
  }
  return rep;
}

using SquareMatrix = std::vector<std::vector<double>>;

inline double hoeffding_statistic(const SquareMatrix& a, const std::vector<int>& perm) {
  KahanSum s;
  for (std::size_t k = 0; k < perm.size(); ++k) s += a[k][static_cast<std::size_t>(perm[k])];
  return s.value();
}

// a^x_{ij} = x_j for i < m and 0 otherwise, one matrix per vector x.
inline std::vector<SquareMatrix> sampling_without_replacement_matrices(const std::vector<std::vector<double>>& xs,
                                                                       std::size_t m) {
  std::vector<SquareMatrix> out;
  for (const auto& x : xs) {
    require(m <= x.size(), "sampling_without_replacement_matrices: m exceeds n");
    SquareMatrix a(x.size(), std::vector<double>(x.size(), 0.0));
    for (std::size_t i = 0; i < m; ++i) a[i] = x;
    out.push_back(std::move(a));
  }
  return out;
}

struct HoeffdingBound {
  double bound = 0.0;
  double A = 0.0;
  double B_r = 0.0;
  double EZ = 0.0;
  double tail_threshold = 0.0;  // EZ + 4e D sqrt(r) A + 10 e D^2 r B_r
  double tail_probability = 0.0;
  std::optional<double> exact_lhs;  // ||(Z - EZ)_+||_r when enumerated
  std::string method = "exact";
  std::size_t samples = 0;
  double A_stderr = 0.0;
};

inline constexpr std::size_t kHoeffdingExactLimit = 6;

inline HoeffdingBound hoeffding_supremum_bound(const std::vector<SquareMatrix>& matrices, double r, std::size_t n,
                                               std::size_t samples = 100000, std::uint64_t seed = 0) {
  require(!matrices.empty(), "hoeffding_supremum_bound: empty matrix list");
  require(r >= 2.0, "hoeffding_supremum_bound: r must be >= 2");
  for (const auto& a : matrices) {
    require(a.size() == n, "hoeffding_supremum_bound: matrix has wrong size");
    for (const auto& row : a) require(row.size() == n, "hoeffding_supremum_bound: matrix is not square");
  }
  auto eval = [&](const std::vector<int>& perm, double& z, double& sq, double& mx) {
    z = -std::numeric_limits<double>::infinity();
    sq = 0.0;
    mx = 0.0;
    for (const auto& a : matrices) {
      z = std::max(z, hoeffding_statistic(a, perm));
      double s2 = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = a[k][static_cast<std::size_t>(perm[k])];
        s2 += v * v;
        mx = std::max(mx, std::abs(v));
      }
      sq = std::max(sq, std::sqrt(s2));
    }
  };
  HoeffdingBound out;
  std::vector<double> zs, sqs, mxs;
  if (n <= kHoeffdingExactLimit) {
    for (const auto& p : all_permutations(n)) {
      double z, sq, mx;
      eval(p, z, sq, mx);
      zs.push_back(z);
      sqs.push_back(sq);
      mxs.push_back(mx);
    }
  } else {
    out.method = "monte_carlo";
    out.samples = samples;
    std::vector<int> p(n);
    for (std::size_t s = 0; s < samples; ++s) {
      RandomStream rng(seed, s);
      std::iota(p.begin(), p.end(), 0);
      for (std::size_t i = n; i-- > 1;) std::swap(p[i], p[rng.index(i + 1)]);
      double z, sq, mx;
      eval(p, z, sq, mx);
      zs.push_back(z);
      sqs.push_back(sq);
      mxs.push_back(mx);
    }
  }
  const double cnt = static_cast<double>(zs.size());
  KahanSum ez, ea, ea2, eb;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    ez += zs[i];
    ea += sqs[i];
    ea2 += sqs[i] * sqs[i];
    eb += std::pow(mxs[i], r);
  }
  out.EZ = ez.value() / cnt;
  out.A = ea.value() / cnt;
  out.B_r = std::pow(eb.value() / cnt, 1.0 / r);
  if (out.method != "exact") out.A_stderr = std::sqrt(std::max(0.0, ea2.value() / cnt - out.A * out.A) / cnt);
  const double D = symmetric_group_D();
  out.bound = 4.0 * D * std::sqrt(r) * out.A + 10.0 * D * D * r * out.B_r;
  out.tail_threshold = out.EZ + std::exp(1.0) * out.bound;
  out.tail_probability = std::exp(2.0 - r);
  if (out.method == "exact") {
    KahanSum m;
    for (double z : zs) m += std::pow(positive_part(z - out.EZ), r);
    out.exact_lhs = std::pow(m.value() / cnt, 1.0 / r);
  }
  return out;
}

// ============================================================================
// Monte Carlo tails
// ============================================================================

// Vose alias sampler over a tabulated distribution.
class AliasSampler {
 public:
  explicit AliasSampler(const std::vector<double>& p) : prob_(p.size()), alias_(p.size(), 0) {
    const std::size_t n = p.size();
    require(n > 0, "AliasSampler: empty distribution");
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = p[i] * static_cast<double>(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) (scaled[i] < 1.0 ? small : large).push_back(i);
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::size_t i : large) prob_[i] = 1.0;
    for (std::size_t i : small) prob_[i] = 1.0;
  }
  std::size_t sample(RandomStream& rng) const {
    const std::size_t i = rng.index(prob_.size());
    return rng.uniform() < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(hits) / nn;
  const double den = 1.0 + z * z / nn;
  const double centre = (ph + z * z / (2.0 * nn)) / den;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / den;
  return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == n ? 1.0 : std::min(1.0, centre + half)};
}

struct TailRow {
  double t = 0.0;
  double empirical = 0.0;
  Interval ci;
  double bound = 0.0;
  bool dominated() const { return bound >= ci.hi; }
};

struct TailReport {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double mean = 0.0;
  std::vector<TailRow> rows;
  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const TailRow& r) { return r.dominated(); });
  }
};

inline constexpr std::size_t kSampleBlock = 4096;

// Samples f(X) for X ~ mu using per-block random streams.
inline std::vector<double> sample_values(const FiniteSpace& space, const ScalarField& f, std::size_t samples,
                                         std::uint64_t seed) {
  space.check_field(f);
  AliasSampler alias(space.mu());
  std::vector<double> out(samples);
  for (std::size_t b = 0; b * kSampleBlock < samples; ++b) {
    RandomStream rng(seed, b);
    const std::size_t end = std::min(samples, (b + 1) * kSampleBlock);
    for (std::size_t i = b * kSampleBlock; i < end; ++i) out[i] = f[alias.sample(rng)];
  }
  return out;
}

inline TailReport tail_compare_values(const std::vector<double>& values, double ef,
                                      const std::function<double(double)>& bound_fn, const std::vector<double>& t_grid) {
  TailReport rep;
  rep.samples = values.size();
  rep.mean = ef;
  for (double t : t_grid) {
    std::size_t hits = 0;
    for (double v : values) hits += (v - ef >= t) ? 1 : 0;
    TailRow row;
    row.t = t;
    row.empirical = values.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(values.size());
    row.ci = wilson_interval(hits, values.size());
    row.bound = bound_fn(t);
    rep.rows.push_back(row);
  }
  return rep;
}

inline TailReport monte_carlo_tail_compare(const FiniteSpace& space, const ScalarField& f,
                                           const std::function<double(double)>& bound_fn,
                                           const std::vector<double>& t_grid, std::size_t samples, std::uint64_t seed) {
  require(samples > 0, "monte_carlo_tail_compare: need samples");
  auto values = sample_values(space, f, samples, seed);
  auto rep = tail_compare_values(values, mean(space, f), bound_fn, t_grid);
  rep.seed = seed;
  return rep;
}

// min(1, min_r (m(r)/t)^r) over the grid, where m(r) bounds ||(f - Ef)_+||_r.
inline double chebyshev_tail(double t, const std::function<double(double)>& moment_bound,
                             const std::vector<double>& r_grid) {
  if (t <= 0.0) return 1.0;
  double best = 1.0;
  for (double r : r_grid) best = std::min(best, std::pow(moment_bound(r) / t, r));
  return best;
}

// ||(f - Ef)_+||_r <= K sqrt(r) ||sqrt(Gamma_+ f)||_r under Glauber dynamics.
inline std::function<double(double)> glauber_moment_bound(const Kernel& k, const ScalarField& f, double rho0) {
  const double K = glauber_K(rho0);
  auto gp = gamma_plus(k, f);
  for (double& v : gp) v = std::sqrt(v);
  const FiniteSpace space = k.space();
  return [K, gp, space](double r) { return K * std::sqrt(r) * lr_norm(space, gp, r); };
}

}  // namespace fineq
