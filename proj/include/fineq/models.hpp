#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "constants.hpp"
#include "dirichlet.hpp"
#include "finite_space.hpp"

#include <json.hpp>

namespace fineq {

// ============================================================================
// Bundles
// ============================================================================

struct PredictedBound {
  std::string kind;  // rho0, rho1, lambda, alpha_p, dobrushin_alpha, dobrushin_beta
  std::optional<double> lower;
  std::optional<double> upper;
  std::string citation;
  bool c_unspecified = false;  // bound holds only up to an unknown constant
  bool linear_in_p = false;    // alpha_p bound equals lower * p
  double lower_at(double p) const { return linear_in_p ? *lower * p : *lower; }
};

struct ModelBundle {
  Kernel kernel;
  std::vector<PredictedBound> predicted;
  nlohmann::json metadata;
  // Configuration of each state for product-type models (empty otherwise).
  std::vector<std::vector<int>> configs;

  const FiniteSpace& space() const { return kernel.space(); }
  std::vector<const PredictedBound*> find(const std::string& kind) const {
    std::vector<const PredictedBound*> out;
    for (const auto& b : predicted) {
      if (b.kind == kind) out.push_back(&b);
    }
    return out;
  }
};

// ============================================================================
// Product spaces and Glauber dynamics
// ============================================================================

struct ProductSpec {
  std::vector<std::vector<std::string>> alphabet;  // symbols per site
  std::vector<std::vector<int>> support;           // configurations with positive mass
  std::vector<double> weights;                     // unnormalized, one per support entry

  std::size_t sites() const { return alphabet.size(); }

  static ProductSpec from_marginals(const std::vector<std::vector<double>>& marginals) {
    ProductSpec s;
    for (const auto& m : marginals) {
      require(!m.empty(), "ProductSpec: empty marginal");
      std::vector<std::string> a;
      for (std::size_t v = 0; v < m.size(); ++v) a.push_back(std::to_string(v));
      s.alphabet.push_back(a);
    }
    std::vector<int> cur(marginals.size(), 0);
    std::function<void(std::size_t, double)> rec = [&](std::size_t i, double w) {
      if (i == marginals.size()) {
        s.support.push_back(cur);
        s.weights.push_back(w);
        return;
      }
      for (std::size_t v = 0; v < marginals[i].size(); ++v) {
        if (marginals[i][v] <= 0.0) continue;
        cur[i] = static_cast<int>(v);
        rec(i + 1, w * marginals[i][v]);
      }
    };
    rec(0, 1.0);
    return s;
  }

  // Full product enumeration with a weight function; zero weights drop out.
  static ProductSpec from_weight_function(std::vector<std::vector<std::string>> alphabet,
                                          const std::function<double(const std::vector<int>&)>& w) {
    ProductSpec s;
    s.alphabet = std::move(alphabet);
    std::vector<int> cur(s.alphabet.size(), 0);
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
      if (i == s.alphabet.size()) {
        const double v = w(cur);
        if (v > 0.0) {
          s.support.push_back(cur);
          s.weights.push_back(v);
        }
        return;
      }
      for (std::size_t v = 0; v < s.alphabet[i].size(); ++v) {
        cur[i] = static_cast<int>(v);
        rec(i + 1);
      }
    };
    rec(0);
    return s;
  }
};

namespace detail {

struct ConfigIndex {
  std::vector<std::uint64_t> radix;
  std::unordered_map<std::uint64_t, std::size_t> index;

  explicit ConfigIndex(const ProductSpec& spec) {
    std::uint64_t r = 1;
    for (const auto& a : spec.alphabet) {
      radix.push_back(r);
      r *= a.size();
    }
    for (std::size_t s = 0; s < spec.support.size(); ++s) index.emplace(code(spec.support[s]), s);
  }
  std::uint64_t code(const std::vector<int>& c) const {
    std::uint64_t k = 0;
    for (std::size_t i = 0; i < c.size(); ++i) k += radix[i] * static_cast<std::uint64_t>(c[i]);
    return k;
  }
  std::optional<std::size_t> find(std::uint64_t k) const {
    auto it = index.find(k);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

inline std::string config_label(const ProductSpec& spec, const std::vector<int>& c) {
  bool short_symbols = true;
  for (const auto& a : spec.alphabet) {
    for (const auto& s : a) short_symbols = short_symbols && s.size() == 1;
  }
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!short_symbols && i > 0) out += ",";
    out += spec.alphabet[i][static_cast<std::size_t>(c[i])];
  }
  return out;
}

inline bool is_product_measure(const ProductSpec& spec, const std::vector<double>& mu) {
  std::uint64_t full = 1;
  for (const auto& a : spec.alphabet) full *= a.size();
  if (spec.support.size() != full) return false;
  std::vector<std::vector<double>> marg(spec.sites());
  for (std::size_t i = 0; i < spec.sites(); ++i) marg[i].assign(spec.alphabet[i].size(), 0.0);
  for (std::size_t s = 0; s < spec.support.size(); ++s) {
    for (std::size_t i = 0; i < spec.sites(); ++i) marg[i][static_cast<std::size_t>(spec.support[s][i])] += mu[s];
  }
  for (std::size_t s = 0; s < spec.support.size(); ++s) {
    double prod = 1.0;
    for (std::size_t i = 0; i < spec.sites(); ++i) prod *= marg[i][static_cast<std::size_t>(spec.support[s][i])];
    if (std::abs(prod - mu[s]) > 1e-12 * std::max(prod, mu[s])) return false;
  }
  return true;
}

}  // namespace detail

struct DobrushinResult {
  double alpha = 0.0;
  double beta = 0.0;
  double operator_norm = 0.0;
  std::vector<std::vector<double>> A;
};

inline constexpr std::uint64_t kDobrushinProductLimit = 1u << 16;

inline DobrushinResult dobrushin_parameters(const ProductSpec& spec) {
  const std::size_t n = spec.sites();
  require(n >= 1, "dobrushin_parameters: no sites");
  require(spec.support.size() == spec.weights.size() && !spec.support.empty(), "dobrushin_parameters: bad spec");
  std::uint64_t full = 1;
  for (const auto& a : spec.alphabet) full *= a.size();
  require(full <= kDobrushinProductLimit, "dobrushin_parameters: product space too large for exhaustive search");
  require(n <= 16, "dobrushin_parameters: too many sites");
  detail::ConfigIndex idx(spec);
  std::vector<double> w(full, 0.0);
  for (std::size_t s = 0; s < spec.support.size(); ++s) w[idx.code(spec.support[s])] = spec.weights[s];

  auto decode = [&](std::uint64_t k) {
    std::vector<int> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<int>((k / idx.radix[i]) % spec.alphabet[i].size());
    return c;
  };
  // Conditional law of site i given the other coordinates of code k.
  auto conditional = [&](std::size_t i, std::uint64_t k, std::vector<double>& out) {
    const auto ci = (k / idx.radix[i]) % spec.alphabet[i].size();
    const std::uint64_t base = k - ci * idx.radix[i];
    out.assign(spec.alphabet[i].size(), 0.0);
    double z = 0.0;
    for (std::size_t v = 0; v < out.size(); ++v) {
      out[v] = w[base + v * idx.radix[i]];
      z += out[v];
    }
    if (z <= 0.0) return false;
    for (double& v : out) v /= z;
    return true;
  };

  DobrushinResult res;
  res.A.assign(n, std::vector<double>(n, 0.0));
  std::vector<double> c1, c2;
  for (std::uint64_t k = 0; k < full; ++k) {
    const auto c = decode(k);
    for (std::size_t i = 0; i < n; ++i) {
      if (c[i] != 0) continue;  // x_i is irrelevant for the conditional at i
      if (!conditional(i, k, c1)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        for (std::size_t v = static_cast<std::size_t>(c[j]) + 1; v < spec.alphabet[j].size(); ++v) {
          const std::uint64_t k2 = k + (v - static_cast<std::size_t>(c[j])) * idx.radix[j];
          if (!conditional(i, k2, c2)) continue;
          double tv = 0.0;
          for (std::size_t t = 0; t < c1.size(); ++t) tv += std::abs(c1[t] - c2[t]);
          res.A[i][j] = std::max(res.A[i][j], 0.5 * tv);
        }
      }
    }
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = res.A[i][j];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  res.operator_norm = svd.singularValues()(0);
  res.alpha = 1.0 - res.operator_norm;

  // beta: inf over J strict subset, i outside J, z in support of P(X_i = z_i | X_J = z_J).
  KahanSum total;
  for (double v : spec.weights) total += v;
  const double z = total.value();
  double beta = 1.0;
  const std::uint64_t masks = std::uint64_t{1} << n;
  std::unordered_map<std::uint64_t, double> mj, mji;
  // Digit 0 marks an unconstrained site, so the base is |E_i| + 1.
  std::vector<std::uint64_t> wide(n);
  std::uint64_t r = 1;
  for (std::size_t t = 0; t < n; ++t) {
    wide[t] = r;
    r *= spec.alphabet[t].size() + 1;
  }
  auto key = [&](const std::vector<int>& c, std::uint64_t mask) {
    std::uint64_t k = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (mask >> t & 1u) k += wide[t] * (static_cast<std::uint64_t>(c[t]) + 1);
    }
    return k;
  };
  for (std::uint64_t J = 0; J + 1 < masks; ++J) {
    mj.clear();
    for (std::size_t s = 0; s < spec.support.size(); ++s) mj[key(spec.support[s], J)] += spec.weights[s];
    for (std::size_t i = 0; i < n; ++i) {
      if (J >> i & 1u) continue;
      const std::uint64_t Ji = J | (std::uint64_t{1} << i);
      mji.clear();
      for (std::size_t s = 0; s < spec.support.size(); ++s) mji[key(spec.support[s], Ji)] += spec.weights[s];
      for (std::size_t s = 0; s < spec.support.size(); ++s) {
        const double num = mji[key(spec.support[s], Ji)];
        const double den = J == 0 ? z : mj[key(spec.support[s], J)];
        beta = std::min(beta, num / den);
      }
    }
  }
  res.beta = beta;
  return res;
}

inline std::vector<PredictedBound> dobrushin_predictions(const DobrushinResult& d) {
  std::vector<PredictedBound> out;
  if (d.alpha > 0.0 && d.beta > 0.0) {
    const double ab = d.alpha * d.alpha * d.beta;
    out.push_back({"rho0", ab, std::nullopt, "Dobrushin-type bound rho0 >= alpha^2 beta", false, false});
    if (d.beta < 1.0) {
      out.push_back({"rho1", std::log(2.0) * ab / (2.0 * std::log(1.0 / d.beta)), std::nullopt,
                     "rho1 >= log(2) alpha^2 beta / (2 log(1/beta))", false, false});
    }
    out.push_back({"alpha_p", ab / 6.0, std::nullopt, "alpha_p >= rho0/6 with rho0 >= alpha^2 beta", false, false});
  }
  return out;
}

inline constexpr std::size_t kGlauberDobrushinSites = 12;

inline ModelBundle build_glauber(const ProductSpec& spec) {
  require(spec.sites() >= 1, "build_glauber: no sites");
  require(spec.support.size() == spec.weights.size() && !spec.support.empty(), "build_glauber: bad spec");
  // Canonical lexicographic order of the support.
  std::vector<std::size_t> order(spec.support.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return spec.support[a] < spec.support[b]; });
  ProductSpec sorted;
  sorted.alphabet = spec.alphabet;
  for (std::size_t s : order) {
    require(spec.support[s].size() == spec.sites(), "build_glauber: configuration length mismatch");
    for (std::size_t i = 0; i < spec.sites(); ++i) {
      require(spec.support[s][i] >= 0 && static_cast<std::size_t>(spec.support[s][i]) < spec.alphabet[i].size(),
              "build_glauber: symbol out of range");
    }
    require(spec.weights[s] > 0.0 && std::isfinite(spec.weights[s]), "build_glauber: weights must be positive");
    sorted.support.push_back(spec.support[s]);
    sorted.weights.push_back(spec.weights[s]);
  }
  std::vector<std::string> labels;
  for (const auto& c : sorted.support) labels.push_back(detail::config_label(sorted, c));
  auto space = FiniteSpace::from_weights(sorted.weights, labels);
  detail::ConfigIndex idx(sorted);
  if (idx.index.size() != sorted.support.size()) throw InvalidArgument("build_glauber: duplicate configuration");

  std::vector<RateEntry> entries;
  std::vector<int> cur;
  for (std::size_t s = 0; s < sorted.support.size(); ++s) {
    const auto& c = sorted.support[s];
    const std::uint64_t code = idx.code(c);
    for (std::size_t i = 0; i < sorted.sites(); ++i) {
      const std::uint64_t base = code - static_cast<std::uint64_t>(c[i]) * idx.radix[i];
      double z = 0.0;
      std::vector<std::pair<std::size_t, double>> opts;
      for (std::size_t v = 0; v < sorted.alphabet[i].size(); ++v) {
        auto t = idx.find(base + v * idx.radix[i]);
        if (!t) continue;
        z += sorted.weights[*t];
        if (static_cast<int>(v) != c[i]) opts.emplace_back(*t, sorted.weights[*t]);
      }
      for (auto& [t, wt] : opts) entries.push_back({s, t, wt / z});
    }
  }
  ModelBundle b{Kernel(space, std::move(entries)), {}, nlohmann::json::object(), sorted.support};
  auto comps = connected_components(b.kernel);
  if (comps.size() > 1) throw InvalidArgument("build_glauber: support is not connected by single-site moves");
  validate_reversible(b.kernel);
  b.metadata["model"] = "glauber";
  b.metadata["sites"] = sorted.sites();
  b.metadata["states"] = sorted.support.size();
  const bool product = detail::is_product_measure(sorted, b.space().mu());
  b.metadata["product"] = product;
  if (product) {
    b.predicted.push_back({"rho0", 1.0, std::nullopt, "product measures: mLSI with rho0 = 1", false, false});
    b.predicted.push_back({"alpha_p", 1.0 / 6.0, std::nullopt, "alpha_p >= rho0/6", false, false});
  }
  if (sorted.sites() <= kGlauberDobrushinSites) {
    auto d = dobrushin_parameters(sorted);
    b.metadata["dobrushin_alpha"] = d.alpha;
    b.metadata["dobrushin_beta"] = d.beta;
    for (auto& p : dobrushin_predictions(d)) b.predicted.push_back(p);
  }
  return b;
}

// ============================================================================
// Ising
// ============================================================================

inline ModelBundle build_ising(const std::vector<std::vector<double>>& J, const std::vector<double>& h) {
  const std::size_t n = h.size();
  require(n >= 1, "build_ising: need at least one spin");
  require(n <= 20, "build_ising: n too large for exact tabulation (max 20)");
  require(J.size() == n, "build_ising: J has wrong size");
  for (std::size_t i = 0; i < n; ++i) {
    require(J[i].size() == n, "build_ising: J is not square");
    require(J[i][i] == 0.0, "build_ising: J must have zero diagonal");
    for (std::size_t j = 0; j < n; ++j) require(J[i][j] == J[j][i], "build_ising: J must be symmetric");
  }
  // Log-weights are shifted by their maximum before exponentiation.
  auto energy = [&](const std::vector<int>& c) {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double si = c[i] == 1 ? 1.0 : -1.0;
      for (std::size_t j = 0; j < n; ++j) e += 0.5 * J[i][j] * si * (c[j] == 1 ? 1.0 : -1.0);
      e -= h[i] * si;
    }
    return e;
  };
  std::vector<std::vector<std::string>> alphabet(n, {"-", "+"});
  double top = -std::numeric_limits<double>::infinity();
  ProductSpec::from_weight_function(alphabet, [&](const std::vector<int>& c) {
    top = std::max(top, energy(c));
    return 1.0;
  });
  auto spec = ProductSpec::from_weight_function(alphabet, [&](const std::vector<int>& c) {
    return std::exp(energy(c) - top);
  });
  auto b = build_glauber(spec);
  b.metadata["model"] = "ising";
  double row_max = 0.0, hmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::abs(J[i][j]);
    row_max = std::max(row_max, s);
    hmax = std::max(hmax, std::abs(h[i]));
  }
  b.predicted.push_back({"dobrushin_alpha", 1.0 - row_max, std::nullopt,
                         "Ising: alpha >= 1 - max_i sum_j |J_ij|", false, false});
  b.predicted.push_back({"dobrushin_beta", std::exp(-hmax), std::nullopt,
                         "Ising: beta >= c exp(-|h|_inf), c unspecified", true, false});
  b.metadata["J"] = J;
  b.metadata["h"] = h;
  return b;
}

// ============================================================================
// Hardcore model
// ============================================================================

inline constexpr std::size_t kHardcoreStateLimit = 100000;

inline double conforti_bound(double eta, std::size_t max_degree) {
  const double d = static_cast<double>(max_degree);
  return (1.0 - eta * (d - 1.0) + 2.0 * std::min(eta, 1.0 - eta * d)) / (1.0 + eta);
}

inline ModelBundle build_hardcore(std::size_t vertices, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                                  double eta) {
  require(vertices >= 1, "build_hardcore: need at least one vertex");
  require(eta > 0.0 && std::isfinite(eta), "build_hardcore: eta must be positive");
  std::vector<std::vector<std::size_t>> adj(vertices);
  for (auto [a, c] : edges) {
    require(a < vertices && c < vertices && a != c, "build_hardcore: invalid edge");
    adj[a].push_back(c);
    adj[c].push_back(a);
  }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    require(std::adjacent_find(nb.begin(), nb.end()) == nb.end(), "build_hardcore: repeated edge");
  }
  ProductSpec spec;
  spec.alphabet.assign(vertices, {"0", "1"});
  std::vector<int> cur(vertices, 0);
  // Depth-first enumeration with 0 before 1 yields lexicographic order.
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int count) {
    if (i == vertices) {
      if (spec.support.size() >= kHardcoreStateLimit) throw InvalidArgument("build_hardcore: support too large");
      spec.support.push_back(cur);
      spec.weights.push_back(std::pow(eta, count));
      return;
    }
    cur[i] = 0;
    rec(i + 1, count);
    for (std::size_t j : adj[i]) {
      if (j < i && cur[j] == 1) return;
    }
    cur[i] = 1;
    rec(i + 1, count + 1);
    cur[i] = 0;
  };
  rec(0, 0);
  auto b = build_glauber(spec);
  std::size_t delta = 0;
  for (const auto& nb : adj) delta = std::max(delta, nb.size());
  b.metadata["model"] = "hardcore";
  b.metadata["eta"] = eta;
  b.metadata["max_degree"] = delta;
  if (eta * static_cast<double>(delta) < 1.0) {
    b.predicted.push_back({"rho0", conforti_bound(eta, delta), std::nullopt,
                           "hardcore: rho0 >= (1 - eta(D-1) + 2 min(eta, 1 - eta D))/(1 + eta)", false, false});
  }
  return b;
}

inline std::vector<std::pair<std::size_t, std::size_t>> star_edges(std::size_t rays) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 1; i <= rays; ++i) e.emplace_back(0, i);
  return e;
}

struct GapReport {
  std::size_t n = 0;
  double eta = 0.0;
  double partition_function = 0.0;
  double mass_full = 0.0;  // p = mu(all rays occupied)
  double entropy_module = 0.0;
  double entropy_closed_form = 0.0;
  double energy_module = 0.0;
  double energy_closed_form = 0.0;
  double rho1_upper = 0.0;                // 1/((1+eta) log(1/eta))
  double rho1_upper_test_function = 0.0;  // energy/entropy of the indicator
  double rho0_lower = 0.0;
  std::optional<ConstantReport> rho1_estimate;
  std::optional<ConstantReport> rho0_estimate;
  bool closed_forms_match = false;
};

inline GapReport hardcore_star_gap(std::size_t n, double eta, bool run_optimizers = false,
                                   const OptimizerOptions& opts = {}) {
  require(n >= 1, "hardcore_star_gap: need at least one ray");
  require(eta > 0.0 && eta * static_cast<double>(n) < 1.0, "hardcore_star_gap: requires eta n < 1");
  auto b = build_hardcore(n + 1, star_edges(n), eta);
  GapReport g;
  g.n = n;
  g.eta = eta;
  g.partition_function = eta + std::pow(1.0 + eta, static_cast<double>(n));
  g.mass_full = std::pow(eta, static_cast<double>(n)) / g.partition_function;
  ScalarField f(b.space().size(), 0.0);
  std::size_t full = b.space().size();
  for (std::size_t s = 0; s < b.configs.size(); ++s) {
    const auto& c = b.configs[s];
    bool rays = c[0] == 0;
    for (std::size_t i = 1; i <= n; ++i) rays = rays && c[i] == 1;
    if (rays) full = s;
  }
  require(full < b.space().size(), "hardcore_star_gap: full ray configuration not found");
  f[full] = 1.0;
  const double p = g.mass_full;
  g.entropy_module = entropy(b.space(), f);
  g.entropy_closed_form = p * std::log(1.0 / p);
  ScalarField sf(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) sf[i] = std::sqrt(f[i]);
  g.energy_module = dirichlet_form(b.kernel, sf, sf);
  g.energy_closed_form = p * static_cast<double>(n) / (1.0 + eta);
  g.closed_forms_match = std::abs(g.entropy_module - g.entropy_closed_form) <= 1e-10 &&
                         std::abs(g.energy_module - g.energy_closed_form) <= 1e-10;
  g.rho1_upper = 1.0 / ((1.0 + eta) * std::log(1.0 / eta));
  g.rho1_upper_test_function = g.energy_module / g.entropy_module;
  g.rho0_lower = conforti_bound(eta, n);
  if (run_optimizers) {
    ConstantEstimator est(b.kernel, opts);
    // The indicator itself, floored, is a natural warm start for both ratios.
    ScalarField u(f.size(), -30.0);
    u[full] = 0.0;
    g.rho1_estimate = est.lsi({u});
    g.rho0_estimate = est.mlsi({u});
  }
  return g;
}

// ============================================================================
// Symmetric group and multislices
// ============================================================================

inline std::vector<std::vector<int>> all_permutations(std::size_t n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

namespace detail {

inline std::string sequence_label(const std::vector<int>& s) {
  std::string out;
  const bool wide = std::any_of(s.begin(), s.end(), [](int v) { return v > 9; });
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (wide && i > 0) out += ",";
    out += std::to_string(s[i]);
  }
  return out;
}

// Uniform measure on the given distinct sequences with pair-swap rate per unordered pair.
inline Kernel swap_kernel(const std::vector<std::vector<int>>& states, double rate) {
  std::map<std::vector<int>, std::size_t> index;
  std::vector<std::string> labels;
  for (std::size_t s = 0; s < states.size(); ++s) {
    index.emplace(states[s], s);
    labels.push_back(sequence_label(states[s]));
  }
  auto space = FiniteSpace::from_weights(std::vector<double>(states.size(), 1.0), labels);
  std::vector<RateEntry> entries;
  const std::size_t n = states.empty() ? 0 : states[0].size();
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (states[s][i] == states[s][j]) continue;
        auto t = states[s];
        std::swap(t[i], t[j]);
        entries.push_back({s, index.at(t), rate});
      }
    }
  }
  return Kernel(space, std::move(entries));
}

}  // namespace detail

inline ModelBundle build_interchange(std::size_t n) {
  require(n >= 2 && n <= 6, "build_interchange: n must lie in [2,6]");
  const double nn = static_cast<double>(n);
  auto perms = all_permutations(n);
  ModelBundle b{detail::swap_kernel(perms, 2.0 / (nn * (nn - 1.0))), {}, nlohmann::json::object(), perms};
  validate_reversible(b.kernel);
  b.metadata["model"] = "interchange";
  b.metadata["n"] = n;
  b.predicted.push_back({"rho0", 1.0 / (nn - 1.0), std::nullopt, "interchange: rho0 >= 1/(n-1)", false, false});
  b.predicted.push_back({"alpha_p", (nn + 2.0) / (2.0 * nn * (nn - 1.0)), std::nullopt,
                         "interchange: alpha_p = p(n+2)/(2n(n-1))", false, true});
  b.predicted.push_back({"lambda", (nn + 2.0) / (nn * (nn - 1.0)), std::nullopt,
                         "interchange: alpha_2 = (n+2)/(n(n-1)) bounds the gap", false, false});
  return b;
}

inline ModelBundle build_multislice(const std::vector<int>& kappa) {
  require(!kappa.empty(), "build_multislice: empty composition");
  std::vector<int> seq;
  for (std::size_t i = 0; i < kappa.size(); ++i) {
    require(kappa[i] >= 1, "build_multislice: composition entries must be positive");
    for (int c = 0; c < kappa[i]; ++c) seq.push_back(static_cast<int>(i));
  }
  const std::size_t n = seq.size();
  require(n >= 2, "build_multislice: need at least two coordinates");
  require(n <= 12, "build_multislice: too many coordinates for enumeration");
  std::vector<std::vector<int>> states;
  do {
    states.push_back(seq);
  } while (std::next_permutation(seq.begin(), seq.end()));
  const double nn = static_cast<double>(n);
  ModelBundle b{detail::swap_kernel(states, 2.0 / (nn * (nn - 1.0))), {}, nlohmann::json::object(), states};
  validate_reversible(b.kernel);
  b.metadata["model"] = "multislice";
  b.metadata["kappa"] = kappa;
  b.metadata["n"] = n;
  b.predicted.push_back({"rho0", 1.0 / (nn - 1.0), std::nullopt,
                         "inherited from the interchange process through the coordinate projection", false, false});
  b.predicted.push_back({"alpha_p", (nn + 2.0) / (2.0 * nn * (nn - 1.0)), std::nullopt,
                         "inherited from the interchange process through the coordinate projection", false, true});
  return b;
}

// ============================================================================
// Zero-range process
// ============================================================================

inline constexpr std::size_t kZeroRangeStateLimit = 200000;

// lambdas[i][l-1] = lambda_i(l) for l = 1..m; lambda_i(0) = 0.
inline ModelBundle build_zero_range(int m, const std::vector<std::vector<double>>& lambdas, const std::vector<double>& p) {
  const std::size_t n = p.size();
  require(n >= 2, "build_zero_range: n = 1 has a single state and no moves");
  require(m >= 1, "build_zero_range: need at least one particle");
  require(lambdas.size() == n, "build_zero_range: one rate function per site required");
  KahanSum ps;
  for (double v : p) {
    require(v > 0.0 && std::isfinite(v), "build_zero_range: p must be positive");
    ps += v;
  }
  require(std::abs(ps.value() - 1.0) <= 1e-12, "build_zero_range: p must sum to 1");
  for (const auto& l : lambdas) {
    require(l.size() >= static_cast<std::size_t>(m), "build_zero_range: rate function shorter than m");
    for (int k = 0; k < m; ++k) require(l[static_cast<std::size_t>(k)] > 0.0, "build_zero_range: lambda(l) must be positive for l >= 1");
  }
  std::vector<std::vector<int>> states;
  std::vector<int> cur(n, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
    if (i + 1 == n) {
      cur[i] = left;
      states.push_back(cur);
      if (states.size() > kZeroRangeStateLimit) throw InvalidArgument("build_zero_range: state space too large");
      return;
    }
    for (int v = 0; v <= left; ++v) {
      cur[i] = v;
      rec(i + 1, left - v);
    }
  };
  rec(0, m);
  std::vector<double> logw(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    double lw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lw += states[s][i] * std::log(p[i]);
      for (int l = 1; l <= states[s][i]; ++l) lw -= std::log(lambdas[i][static_cast<std::size_t>(l - 1)]);
    }
    logw[s] = lw;
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(states.size());
  std::vector<std::string> labels;
  std::map<std::vector<int>, std::size_t> index;
  for (std::size_t s = 0; s < states.size(); ++s) {
    w[s] = std::exp(logw[s] - top);
    labels.push_back(detail::sequence_label(states[s]));
    index.emplace(states[s], s);
  }
  auto space = FiniteSpace::from_weights(w, labels);
  std::vector<RateEntry> entries;
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      if (states[s][i] == 0) continue;
      const double out = lambdas[i][static_cast<std::size_t>(states[s][i] - 1)];
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        auto t = states[s];
        --t[i];
        ++t[j];
        entries.push_back({s, index.at(t), out * p[j]});
      }
    }
  }
  ModelBundle b{Kernel(space, std::move(entries)), {}, nlohmann::json::object(), states};
  validate_reversible(b.kernel);
  b.metadata["model"] = "zero_range";
  b.metadata["m"] = m;
  b.metadata["n"] = n;
  double delta = std::numeric_limits<double>::infinity(), Delta = 0.0;
  for (const auto& l : lambdas) {
    for (int k = 0; k < m; ++k) {
      const double prev = k == 0 ? 0.0 : l[static_cast<std::size_t>(k - 1)];
      const double inc = l[static_cast<std::size_t>(k)] - prev;
      delta = std::min(delta, inc);
      Delta = std::max(Delta, inc);
    }
  }
  b.metadata["delta"] = delta;
  b.metadata["Delta"] = Delta;
  if (delta > 0.0) {
    b.predicted.push_back({"rho0", delta * delta / (2.0 * Delta), std::nullopt, "zero-range: rho0 >= delta^2/(2 Delta)",
                           false, false});
    b.predicted.push_back({"alpha_p", delta * delta / (12.0 * Delta), std::nullopt,
                           "zero-range: alpha_p >= delta^2/(12 Delta)", false, false});
  }
  return b;
}

// ============================================================================
// Exponential random graphs
// ============================================================================

struct ErgDelta {
  double delta = 0.0;
  std::vector<PredictedBound> predicted;
};

inline ErgDelta erg_graph_delta(const std::vector<double>& gammas, const std::vector<int>& edge_counts) {
  require(!gammas.empty(), "erg_graph_delta: need gamma_1");
  require(gammas.size() == edge_counts.size(), "erg_graph_delta: one edge count per graph");
  ErgDelta out;
  for (std::size_t i = 1; i < gammas.size(); ++i) {
    const double e = edge_counts[i];
    out.delta += 0.5 * std::abs(gammas[i]) * e * (e - 1.0);
  }
  if (out.delta < 1.0) {
    out.predicted.push_back({"dobrushin_alpha", 1.0 - out.delta, std::nullopt,
                             "exponential random graphs: alpha >= 1 - delta", false, false});
    out.predicted.push_back({"dobrushin_beta", std::exp(-2.0 * std::abs(gammas[0])), std::nullopt,
                             "exponential random graphs: beta >= c exp(-2|gamma_1|), c unspecified", true, false});
  }
  return out;
}

// Injective edge-preserving maps from a small pattern into the graph x.
inline double homomorphism_count(const std::string& pattern, std::size_t n, const std::vector<std::vector<int>>& adj) {
  double count = 0.0;
  if (pattern == "edge") {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) count += (a != b && adj[a][b]) ? 1.0 : 0.0;
  } else if (pattern == "two_star") {
    for (std::size_t c = 0; c < n; ++c) {
      double d = 0.0;
      for (std::size_t a = 0; a < n; ++a) d += adj[c][a];
      count += d * (d - 1.0);
    }
  } else if (pattern == "triangle") {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < n; ++c)
          if (a != b && b != c && a != c && adj[a][b] && adj[b][c] && adj[a][c]) count += 1.0;
  } else {
    throw InvalidArgument("homomorphism_count: unknown pattern " + pattern);
  }
  return count;
}

inline int pattern_vertices(const std::string& p) { return p == "edge" ? 2 : 3; }
inline int pattern_edges(const std::string& p) { return p == "edge" ? 1 : (p == "two_star" ? 2 : 3); }

// Measure proportional to exp(-H) with H = n^2 sum_i gamma_i N_{G_i}(x) / n^{|V_i|}.
inline ModelBundle build_erg(std::size_t vertices, const std::vector<double>& gammas,
                             const std::vector<std::string>& patterns) {
  require(vertices >= 2 && vertices <= 5, "build_erg: vertex count must lie in [2,5]");
  require(gammas.size() == patterns.size() && !gammas.empty(), "build_erg: one gamma per pattern");
  require(patterns[0] == "edge", "build_erg: the first pattern must be the single edge");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < vertices; ++a)
    for (std::size_t b = a + 1; b < vertices; ++b) pairs.emplace_back(a, b);
  const double nn = static_cast<double>(vertices);
  std::vector<std::vector<std::string>> alphabet(pairs.size(), {"0", "1"});
  auto spec = ProductSpec::from_weight_function(alphabet, [&](const std::vector<int>& c) {
    std::vector<std::vector<int>> adj(vertices, std::vector<int>(vertices, 0));
    for (std::size_t e = 0; e < pairs.size(); ++e) adj[pairs[e].first][pairs[e].second] = adj[pairs[e].second][pairs[e].first] = c[e];
    double h = 0.0;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
      h += nn * nn * gammas[i] * homomorphism_count(patterns[i], vertices, adj) / std::pow(nn, pattern_vertices(patterns[i]));
    }
    return std::exp(-h);
  });
  auto b = build_glauber(spec);
  b.metadata["model"] = "erg";
  b.metadata["vertices"] = vertices;
  b.metadata["gammas"] = gammas;
  b.metadata["patterns"] = patterns;
  std::vector<int> ec;
  for (const auto& p : patterns) ec.push_back(pattern_edges(p));
  auto d = erg_graph_delta(gammas, ec);
  b.metadata["delta"] = d.delta;
  for (auto& p : d.predicted) b.predicted.push_back(p);
  return b;
}

// ============================================================================
// Metropolis helper
// ============================================================================

// Rate normalization * min(mu(y)/mu(x), 1) along each listed unordered pair.
inline Kernel metropolis_kernel(const FiniteSpace& space, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                double normalization) {
  require(normalization > 0.0, "metropolis_kernel: normalization must be positive");
  std::vector<RateEntry> entries;
  for (auto [x, y] : pairs) {
    require(x < space.size() && y < space.size() && x != y, "metropolis_kernel: invalid pair");
    entries.push_back({x, y, normalization * std::min(space.mu(y) / space.mu(x), 1.0)});
    entries.push_back({y, x, normalization * std::min(space.mu(x) / space.mu(y), 1.0)});
  }
  return Kernel(space, std::move(entries));
}

// Pairs of configurations differing at one coordinate or by a transposition.
inline std::vector<std::pair<std::size_t, std::size_t>> scp_relation(const std::vector<std::vector<int>>& configs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < configs.size(); ++a) {
    for (std::size_t b = a + 1; b < configs.size(); ++b) {
      std::vector<std::size_t> diff;
      for (std::size_t i = 0; i < configs[a].size(); ++i) {
        if (configs[a][i] != configs[b][i]) diff.push_back(i);
      }
      const bool single = diff.size() == 1;
      const bool swap = diff.size() == 2 && configs[a][diff[0]] == configs[b][diff[1]] &&
                        configs[a][diff[1]] == configs[b][diff[0]];
      if (single || swap) out.emplace_back(a, b);
    }
  }
  return out;
}

// ============================================================================
// Small reference chains
// ============================================================================

// Two states with mu = (1-p, p) and rates Q01 = 2c p, Q10 = 2c (1-p).
inline ModelBundle build_two_point(double p = 0.5, double scale = 1.0) {
  require(p > 0.0 && p < 1.0, "build_two_point: p must lie in (0,1)");
  require(scale > 0.0, "build_two_point: scale must be positive");
  FiniteSpace space({"0", "1"}, {1.0 - p, p});
  ModelBundle b{Kernel(space, {{0, 1, 2.0 * scale * p}, {1, 0, 2.0 * scale * (1.0 - p)}}), {},
                nlohmann::json::object(), {{0}, {1}}};
  b.metadata["model"] = "two_point";
  b.metadata["p"] = p;
  b.metadata["scale"] = scale;
  return b;
}

// Random reversible chain: random mu and symmetric conductances on a
// connected graph (a random spanning path plus extra edges), Q = W / mu.
inline ModelBundle build_random_chain(std::size_t states, std::uint64_t seed, double edge_probability = 0.6) {
  require(states >= 2, "build_random_chain: need at least two states");
  RandomStream rng(seed, 0);
  std::vector<double> w(states);
  for (double& v : w) v = 0.2 + rng.uniform();
  auto space = FiniteSpace::from_weights(w);
  std::vector<std::size_t> perm(states);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = states; i-- > 1;) std::swap(perm[i], perm[rng.index(i + 1)]);
  std::vector<std::vector<double>> cond(states, std::vector<double>(states, 0.0));
  for (std::size_t i = 0; i + 1 < states; ++i) {
    const double c = 0.1 + rng.uniform();
    cond[perm[i]][perm[i + 1]] = cond[perm[i + 1]][perm[i]] = c;
  }
  for (std::size_t a = 0; a < states; ++a) {
    for (std::size_t b = a + 1; b < states; ++b) {
      const double coin = rng.uniform();
      const double c = 0.1 + rng.uniform();
      if (cond[a][b] == 0.0 && coin < edge_probability) cond[a][b] = cond[b][a] = c;
    }
  }
  std::vector<RateEntry> entries;
  for (std::size_t a = 0; a < states; ++a) {
    for (std::size_t b = 0; b < states; ++b) {
      if (cond[a][b] > 0.0) entries.push_back({a, b, cond[a][b] / space.mu(a)});
    }
  }
  ModelBundle bundle{Kernel(space, std::move(entries)), {}, nlohmann::json::object(), {}};
  validate_reversible(bundle.kernel);
  bundle.metadata["model"] = "random_chain";
  bundle.metadata["states"] = states;
  bundle.metadata["seed"] = seed;
  return bundle;
}

// ============================================================================
// Predictions against estimates
// ============================================================================

// Estimates must respect every predicted bound with an explicit constant.
inline VerificationReport check_predictions(const ModelBundle& b, ConstantEstimator& est,
                                            const std::vector<double>& p_grid, double rel_slack = 0.01) {
  VerificationReport rep;
  rep.name = "predictions";
  auto slack = [&](double v) { return one_sided_slack(v, rel_slack); };
  for (const auto& pb : b.predicted) {
    if (pb.c_unspecified) continue;
    std::vector<std::pair<std::string, double>> est_values;
    std::vector<double> at;
    if (pb.kind == "rho0") {
      est_values.push_back({"rho0", est.mlsi().value});
    } else if (pb.kind == "rho1") {
      est_values.push_back({"rho1", est.lsi().value});
    } else if (pb.kind == "lambda") {
      est_values.push_back({"lambda", est.poincare().value});
    } else if (pb.kind == "alpha_p") {
      for (double p : p_grid) {
        est_values.push_back({"alpha_p (p=" + std::to_string(p) + ")", est.beckner_p(p).value});
        at.push_back(p);
      }
    } else {
      continue;
    }
    for (std::size_t i = 0; i < est_values.size(); ++i) {
      const auto& [name, v] = est_values[i];
      rep.values[name] = v;
      if (pb.lower) {
        const double lo = at.empty() ? *pb.lower : pb.lower_at(at[i]);
        rep.checks.push_back({name + " >= predicted", v, lo, slack(lo), pb.citation});
      }
      if (pb.upper) rep.checks.push_back({name + " <= predicted", *pb.upper, v, slack(*pb.upper), pb.citation});
    }
  }
  return rep;
}

}  // namespace fineq
