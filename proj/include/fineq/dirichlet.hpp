#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"
#include "finite_space.hpp"

namespace fineq {

struct RateEntry {
  std::size_t from;
  std::size_t to;
  double rate;
};

struct BalanceViolation {
  std::size_t x;
  std::size_t y;
  double magnitude;  // |Q[x][y] mu(x) - Q[y][x] mu(y)|
};

// ============================================================================
// Kernel
// ============================================================================

// Jump rates stored in compressed rows; the diagonal is dropped on input.
class Kernel {
 public:
  static constexpr double kBalanceTolerance = 1e-10;

  Kernel(FiniteSpace space, std::vector<RateEntry> entries) : space_(std::move(space)) {
    const std::size_t n = space_.size();
    std::vector<RateEntry> kept;
    kept.reserve(entries.size());
    for (const auto& e : entries) {
      require(e.from < n && e.to < n, "Kernel: rate index out of range");
      require(std::isfinite(e.rate) && e.rate >= 0.0, "Kernel: rates must be finite and nonnegative");
      if (e.from == e.to || e.rate == 0.0) continue;
      kept.push_back(e);
    }
    std::sort(kept.begin(), kept.end(), [](const RateEntry& a, const RateEntry& b) {
      return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    });
    row_.assign(n + 1, 0);
    for (std::size_t k = 0; k < kept.size(); ++k) {
      if (k > 0 && kept[k].from == kept[k - 1].from && kept[k].to == kept[k - 1].to) {
        throw InvalidArgument("Kernel: duplicate rate entry");
      }
      ++row_[kept[k].from + 1];
      col_.push_back(kept[k].to);
      rate_.push_back(kept[k].rate);
    }
    for (std::size_t x = 0; x < n; ++x) row_[x + 1] += row_[x];
  }

  // Dense constructor; Q[x][x] is ignored.
  static Kernel from_dense(FiniteSpace space, const std::vector<std::vector<double>>& q) {
    require(q.size() == space.size(), "Kernel: rate matrix has wrong row count");
    std::vector<RateEntry> entries;
    for (std::size_t x = 0; x < q.size(); ++x) {
      require(q[x].size() == space.size(), "Kernel: rate matrix has wrong column count");
      for (std::size_t y = 0; y < q[x].size(); ++y) {
        if (x != y && q[x][y] != 0.0) entries.push_back({x, y, q[x][y]});
      }
    }
    return Kernel(std::move(space), std::move(entries));
  }

  const FiniteSpace& space() const { return space_; }
  std::size_t size() const { return space_.size(); }
  std::size_t nonzeros() const { return rate_.size(); }

  std::size_t row_begin(std::size_t x) const { return row_[x]; }
  std::size_t row_end(std::size_t x) const { return row_[x + 1]; }
  std::size_t target(std::size_t k) const { return col_[k]; }
  double rate_at(std::size_t k) const { return rate_[k]; }

  double rate(std::size_t x, std::size_t y) const {
    auto first = col_.begin() + static_cast<std::ptrdiff_t>(row_[x]);
    auto last = col_.begin() + static_cast<std::ptrdiff_t>(row_[x + 1]);
    auto it = std::lower_bound(first, last, y);
    if (it == last || *it != y) return 0.0;
    return rate_[static_cast<std::size_t>(it - col_.begin())];
  }

  std::vector<RateEntry> entries() const {
    std::vector<RateEntry> out;
    out.reserve(rate_.size());
    for (std::size_t x = 0; x < size(); ++x) {
      for (std::size_t k = row_[x]; k < row_[x + 1]; ++k) out.push_back({x, col_[k], rate_[k]});
    }
    return out;
  }

  double max_exit_rate() const {
    double best = 0.0;
    for (std::size_t x = 0; x < size(); ++x) {
      double s = 0.0;
      for (std::size_t k = row_[x]; k < row_[x + 1]; ++k) s += rate_[k];
      best = std::max(best, s);
    }
    return best;
  }

  Kernel scaled(double c) const {
    require(c > 0.0 && std::isfinite(c), "Kernel: scale factor must be positive");
    auto e = entries();
    for (auto& r : e) r.rate *= c;
    return Kernel(space_, std::move(e));
  }

 private:
  FiniteSpace space_;
  std::vector<std::size_t> row_;
  std::vector<std::size_t> col_;
  std::vector<double> rate_;
};

// ============================================================================
// Structural checks
// ============================================================================

inline std::vector<BalanceViolation> check_detailed_balance(const Kernel& k) {
  std::vector<BalanceViolation> out;
  const auto& mu = k.space().mu();
  for (std::size_t x = 0; x < k.size(); ++x) {
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t y = k.target(j);
      const double fwd = k.rate_at(j) * mu[x];
      const double bwd = k.rate(y, x) * mu[y];
      // Pairs with a zero reverse rate are visited only from the nonzero side.
      if (y < x && bwd > 0.0) continue;
      const double diff = std::abs(fwd - bwd);
      if (diff > Kernel::kBalanceTolerance * std::max({fwd, bwd, 1e-30})) out.push_back({x, y, diff});
    }
  }
  return out;
}

inline void validate_reversible(const Kernel& k) {
  auto v = check_detailed_balance(k);
  if (!v.empty()) {
    throw InvalidArgument("Kernel violates detailed balance at (" + std::to_string(v.front().x) + "," +
                          std::to_string(v.front().y) + "), " + std::to_string(v.size()) + " violating pair(s)");
  }
}

// Connected components of the undirected support graph, each sorted.
inline std::vector<std::vector<std::size_t>> connected_components(const Kernel& k) {
  const std::size_t n = k.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      adj[x].push_back(k.target(j));
      adj[k.target(j)].push_back(x);
    }
  }
  std::vector<int> seen(n, 0);
  std::vector<std::vector<std::size_t>> comps;
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> comp;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const std::size_t x = q.front();
      q.pop();
      comp.push_back(x);
      for (std::size_t y : adj[x]) {
        if (!seen[y]) {
          seen[y] = 1;
          q.push(y);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

class ReducibleKernel : public InvalidArgument {
 public:
  explicit ReducibleKernel(std::vector<std::vector<std::size_t>> comps)
      : InvalidArgument("reducible kernel: " + std::to_string(comps.size()) + " connected components"),
        components(std::move(comps)) {}
  std::vector<std::vector<std::size_t>> components;
};

inline void require_irreducible(const Kernel& k) {
  auto comps = connected_components(k);
  if (comps.size() > 1) throw ReducibleKernel(std::move(comps));
}

// ============================================================================
// Quadratic forms
// ============================================================================

inline double dirichlet_form(const Kernel& k, const ScalarField& f, const ScalarField& g) {
  k.space().check_field(f);
  k.space().check_field(g);
  KahanSum s;
  for (std::size_t x = 0; x < k.size(); ++x) {
    const double mx = k.space().mu(x);
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t y = k.target(j);
      s += 0.5 * (f[y] - f[x]) * (g[y] - g[x]) * k.rate_at(j) * mx;
    }
  }
  return s.value();
}

// Same form through the one-sided route sum (f(x)-f(y))_+ (g(x)-g(y)) Q mu.
inline double dirichlet_form_plus_route(const Kernel& k, const ScalarField& f, const ScalarField& g) {
  k.space().check_field(f);
  k.space().check_field(g);
  KahanSum s;
  for (std::size_t x = 0; x < k.size(); ++x) {
    const double mx = k.space().mu(x);
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t y = k.target(j);
      s += positive_part(f[x] - f[y]) * (g[x] - g[y]) * k.rate_at(j) * mx;
    }
  }
  return s.value();
}

inline ScalarField carre_du_champ(const Kernel& k, const ScalarField& f, const ScalarField& g) {
  k.space().check_field(f);
  k.space().check_field(g);
  ScalarField out(k.size(), 0.0);
  for (std::size_t x = 0; x < k.size(); ++x) {
    KahanSum s;
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const std::size_t y = k.target(j);
      s += 0.5 * (f[y] - f[x]) * (g[y] - g[x]) * k.rate_at(j);
    }
    out[x] = s.value();
  }
  return out;
}

inline ScalarField gamma_plus(const Kernel& k, const ScalarField& f) {
  k.space().check_field(f);
  ScalarField out(k.size(), 0.0);
  for (std::size_t x = 0; x < k.size(); ++x) {
    KahanSum s;
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      const double d = positive_part(f[x] - f[k.target(j)]);
      s += d * d * k.rate_at(j);
    }
    out[x] = s.value();
  }
  return out;
}

inline ScalarField generator_apply(const Kernel& k, const ScalarField& f) {
  k.space().check_field(f);
  ScalarField out(k.size(), 0.0);
  for (std::size_t x = 0; x < k.size(); ++x) {
    KahanSum s;
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) s += (f[k.target(j)] - f[x]) * k.rate_at(j);
    out[x] = s.value();
  }
  return out;
}

// (Lambda g)(x) = -mu(x) Lg(x), so that Dirichlet form E(f,g) = <f, Lambda g>.
inline ScalarField weighted_laplacian(const Kernel& k, const ScalarField& g) {
  ScalarField out = generator_apply(k, g);
  for (std::size_t x = 0; x < out.size(); ++x) out[x] *= -k.space().mu(x);
  return out;
}

// Row vector (mu L)(y) = sum_x mu(x) L(x,y); zero iff mu is stationary.
inline ScalarField stationarity_residual(const Kernel& k) {
  const auto& mu = k.space().mu();
  std::vector<KahanSum> acc(k.size());
  for (std::size_t x = 0; x < k.size(); ++x) {
    for (std::size_t j = k.row_begin(x); j < k.row_end(x); ++j) {
      acc[k.target(j)] += mu[x] * k.rate_at(j);
      acc[x] += -mu[x] * k.rate_at(j);
    }
  }
  ScalarField out(k.size());
  for (std::size_t y = 0; y < k.size(); ++y) out[y] = acc[y].value();
  return out;
}

}  // namespace fineq
