#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fineq/io.hpp"

using namespace fineq;

namespace {

double max_abs(const ScalarField& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::vector<std::vector<double>> zeros(std::size_t n) { return std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)); }

std::size_t find_config(const ModelBundle& b, const std::vector<int>& c) {
  for (std::size_t s = 0; s < b.configs.size(); ++s) {
    if (b.configs[s] == c) return s;
  }
  return b.configs.size();
}

}  // namespace

TEST(Glauber, ProductConditionalsAreMarginals) {
  auto b = build_glauber(ProductSpec::from_marginals({{0.3, 0.7}, {0.6, 0.4}}));
  EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  ASSERT_EQ(b.space().size(), 4u);
  const std::size_t s00 = find_config(b, {0, 0}), s10 = find_config(b, {1, 0}), s01 = find_config(b, {0, 1});
  EXPECT_NEAR(b.kernel.rate(s00, s10), 0.7, 1e-15);
  EXPECT_NEAR(b.kernel.rate(s10, s00), 0.3, 1e-15);
  EXPECT_NEAR(b.kernel.rate(s00, s01), 0.4, 1e-15);
  ASSERT_FALSE(b.find("rho0").empty());
  EXPECT_EQ(*b.find("rho0")[0]->lower, 1.0);
  EXPECT_DOUBLE_EQ(*b.find("alpha_p")[0]->lower, 1.0 / 6.0);
}

TEST(Glauber, RejectsDisconnectedSupport) {
  ProductSpec s;
  s.alphabet = {{"0", "1"}, {"0", "1"}};
  s.support = {{0, 0}, {1, 1}};
  s.weights = {1.0, 1.0};
  EXPECT_THROW(build_glauber(s), InvalidArgument);
}

TEST(Dobrushin, ProductMeasure) {
  auto d = dobrushin_parameters(ProductSpec::from_marginals({{0.2, 0.8}, {0.5, 0.5}, {0.35, 0.65}}));
  EXPECT_NEAR(d.alpha, 1.0, 1e-14);
  EXPECT_NEAR(d.operator_norm, 0.0, 1e-14);
  EXPECT_NEAR(d.beta, 0.2, 1e-14);
}

TEST(Ising, TwoSpinOracle) {
  const double t = 0.4;
  auto J = zeros(2);
  J[0][1] = J[1][0] = t;
  auto b = build_ising(J, {0.0, 0.0});
  const double Z = 2.0 * std::exp(t) + 2.0 * std::exp(-t);
  EXPECT_NEAR(b.space().mu(find_config(b, {1, 1})), std::exp(t) / Z, 1e-15);
  EXPECT_NEAR(b.space().mu(find_config(b, {1, 0})), std::exp(-t) / Z, 1e-15);
  EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
}

TEST(Ising, FreeSpinsDobrushin) {
  auto b = build_ising(zeros(2), {0.0, 0.0});
  EXPECT_NEAR(b.metadata["dobrushin_alpha"].get<double>(), 1.0, 1e-14);
  EXPECT_NEAR(b.metadata["dobrushin_beta"].get<double>(), 0.5, 1e-14);
  ASSERT_FALSE(b.find("rho0").empty());
  double best = 0.0;
  for (auto* p : b.find("rho0")) best = std::max(best, *p->lower);
  EXPECT_GE(best, 0.5);
}

TEST(Ising, ZeroCouplingMatchesProductGlauber) {
  auto a = build_ising(zeros(3), {0.0, 0.0, 0.0});
  auto g = build_glauber(ProductSpec::from_marginals({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}));
  ASSERT_EQ(a.space().size(), g.space().size());
  for (std::size_t s = 0; s < a.space().size(); ++s) EXPECT_EQ(a.space().mu(s), g.space().mu(s));

  const std::vector<double> h{0.3, -0.2, 0.1};
  auto b = build_ising(zeros(3), h);
  std::vector<std::vector<double>> marg;
  for (double hi : h) marg.push_back({std::exp(hi) / (2.0 * std::cosh(hi)), std::exp(-hi) / (2.0 * std::cosh(hi))});
  auto p = build_glauber(ProductSpec::from_marginals(marg));
  for (std::size_t s = 0; s < b.space().size(); ++s) EXPECT_NEAR(b.space().mu(s), p.space().mu(s), 1e-15);
  EXPECT_TRUE(b.metadata["product"].get<bool>());
}

TEST(Ising, PropertyFlipSymmetryWithoutField) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed, 3);
    const std::size_t n = 2 + seed % 4;
    auto J = zeros(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) J[i][j] = J[j][i] = rng.uniform(-0.5, 0.5);
    auto b = build_ising(J, std::vector<double>(n, 0.0));
    for (std::size_t s = 0; s < b.configs.size(); ++s) {
      auto c = b.configs[s];
      for (int& v : c) v = 1 - v;
      EXPECT_NEAR(b.space().mu(s), b.space().mu(find_config(b, c)), 1e-15);
    }
    EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  }
}

TEST(Ising, RejectsBadCoupling) {
  auto J = zeros(2);
  J[0][1] = 0.1;
  EXPECT_THROW(build_ising(J, {0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(build_ising(zeros(21), std::vector<double>(21, 0.0)), InvalidArgument);
}

TEST(Hardcore, StarPartitionFunction) {
  const std::size_t n = 5;
  const double eta = 0.07;
  auto b = build_hardcore(n + 1, star_edges(n), eta);
  const double Z = eta + std::pow(1.0 + eta, static_cast<double>(n));
  std::vector<int> centre(n + 1, 0), rays(n + 1, 1);
  centre[0] = 1;
  rays[0] = 0;
  EXPECT_NEAR(b.space().mu(find_config(b, centre)), eta / Z, 1e-15);
  EXPECT_NEAR(b.space().mu(find_config(b, rays)), std::pow(eta, static_cast<double>(n)) / Z, 1e-18);
  EXPECT_EQ(b.space().size(), (1u << n) + 1u);
  EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  bool found = false;
  for (auto* pb : b.find("rho0")) found = found || *pb->lower == conforti_bound(eta, n);
  EXPECT_TRUE(found);
}

TEST(Hardcore, EdgelessIsProductBernoulli) {
  const double eta = 0.4;
  auto b = build_hardcore(3, {}, eta);
  const double q = eta / (1.0 + eta);
  for (std::size_t s = 0; s < b.configs.size(); ++s) {
    double expect = 1.0;
    for (int c : b.configs[s]) expect *= c ? q : 1.0 - q;
    EXPECT_NEAR(b.space().mu(s), expect, 1e-15);
  }
  EXPECT_TRUE(b.metadata["product"].get<bool>());
}

TEST(Hardcore, StarGapClosedForms) {
  for (std::size_t n : {4u, 8u, 10u, 12u}) {
    const double eta = 1.0 / (2.0 * static_cast<double>(n));
    auto g = hardcore_star_gap(n, eta);
    EXPECT_TRUE(g.closed_forms_match) << n;
    EXPECT_NEAR(g.entropy_module, g.entropy_closed_form, 1e-10);
    EXPECT_NEAR(g.energy_module, g.energy_closed_form, 1e-10);
    EXPECT_LE(g.rho1_upper_test_function, g.rho1_upper * (1.0 + 1e-12));
  }
  EXPECT_NEAR(hardcore_star_gap(10, 1.0 / 20.0).rho1_upper, 0.3179, 5e-5);
  EXPECT_THROW(hardcore_star_gap(4, 0.25), InvalidArgument);
}

TEST(Hardcore, ConfortiTrendAcrossN) {
  // At eta = 1/(2n) the bound is (1/2 + 3 eta)/(1 + eta), decreasing to 1/2.
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {4u, 8u, 12u}) {
    const double eta = 1.0 / (2.0 * static_cast<double>(n));
    const double c = hardcore_star_gap(n, eta).rho0_lower;
    EXPECT_NEAR(c, (0.5 + 3.0 * eta) / (1.0 + eta), 1e-15);
    EXPECT_GE(c, 0.5);
    EXPECT_LT(c, prev);
    EXPECT_LE(c - 0.5, 2.5 * eta + 1e-15);
    prev = c;
  }
}

TEST(Hardcore, StarOptimizersRespectBounds) {
  const std::size_t n = 6;
  const double eta = 1.0 / 12.0;
  OptimizerOptions opts;
  opts.starts = 8;
  auto g = hardcore_star_gap(n, eta, true, opts);
  ASSERT_TRUE(g.rho1_estimate && g.rho0_estimate);
  EXPECT_LE(g.rho1_estimate->value, g.rho1_upper_test_function * (1.0 + 1e-9));
  EXPECT_GE(g.rho0_estimate->value, g.rho0_lower * 0.99);
}

TEST(Interchange, SmallStructure) {
  auto b = build_interchange(3);
  ASSERT_EQ(b.space().size(), 6u);
  for (std::size_t x = 0; x < 6; ++x) {
    ASSERT_EQ(b.kernel.row_end(x) - b.kernel.row_begin(x), 3u);
    for (std::size_t j = b.kernel.row_begin(x); j < b.kernel.row_end(x); ++j) EXPECT_NEAR(b.kernel.rate_at(j), 1.0 / 3.0, 1e-15);
  }
  EXPECT_THROW(build_interchange(7), InvalidArgument);
  EXPECT_THROW(build_interchange(1), InvalidArgument);
}

TEST(Interchange, SpectralGap) {
  for (std::size_t n = 2; n <= 5; ++n) {
    auto b = build_interchange(n);
    const double nn = static_cast<double>(n);
    const double gap = optimal_poincare(b.kernel).value;
    EXPECT_NEAR(gap, 2.0 / (nn - 1.0), 1e-9) << n;
    EXPECT_GE(gap, (nn + 2.0) / (nn * (nn - 1.0)) - 1e-8);
    EXPECT_DOUBLE_EQ(b.find("alpha_p")[0]->lower_at(2.0), (nn + 2.0) / (nn * (nn - 1.0)));
  }
}

TEST(Multislice, SmallestSliceIsFlip) {
  auto b = build_multislice({1, 1});
  ASSERT_EQ(b.space().size(), 2u);
  EXPECT_NEAR(b.kernel.rate(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(b.kernel.rate(1, 0), 1.0, 1e-15);
  auto c = build_multislice({2, 2});
  EXPECT_EQ(c.space().size(), 6u);
  EXPECT_TRUE(check_detailed_balance(c.kernel).empty());
  EXPECT_THROW(build_multislice({0, 2}), InvalidArgument);
}

TEST(Multislice, PropertyProjectionConsistency) {
  for (const auto& kappa : {std::vector<int>{2, 2}, std::vector<int>{1, 2, 1}, std::vector<int>{3, 1}}) {
    auto ms = build_multislice(kappa);
    const std::size_t n = ms.configs[0].size();
    auto sn = build_interchange(n);
    std::map<std::vector<int>, std::size_t> index;
    for (std::size_t s = 0; s < ms.configs.size(); ++s) index[ms.configs[s]] = s;
    const auto base = ms.configs[0];  // sorted labels
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RandomStream rng(seed, 9);
      ScalarField f(ms.space().size());
      for (double& v : f) v = rng.normal();
      ScalarField lifted(sn.space().size());
      for (std::size_t p = 0; p < sn.configs.size(); ++p) {
        std::vector<int> x(n);
        for (std::size_t j = 0; j < n; ++j) x[j] = base[static_cast<std::size_t>(sn.configs[p][j])];
        lifted[p] = f[index.at(x)];
      }
      EXPECT_NEAR(dirichlet_form(ms.kernel, f, f), dirichlet_form(sn.kernel, lifted, lifted), 1e-12);
      EXPECT_NEAR(mean(ms.space(), f), mean(sn.space(), lifted), 1e-12);
    }
  }
}

TEST(ZeroRange, IndependentWalkers) {
  std::vector<std::vector<double>> lam(3, {1.0, 2.0, 3.0, 4.0});
  const std::vector<double> p{0.2, 0.3, 0.5};
  auto b = build_zero_range(4, lam, p);
  EXPECT_EQ(b.space().size(), 15u);
  EXPECT_LT(max_abs(stationarity_residual(b.kernel)), 1e-10);
  EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  // Multinomial(4; p) restricted to the simplex.
  for (std::size_t s = 0; s < b.configs.size(); ++s) {
    const auto& x = b.configs[s];
    double w = 24.0;
    for (std::size_t i = 0; i < 3; ++i) w *= std::pow(p[i], x[i]) / std::tgamma(x[i] + 1.0);
    EXPECT_NEAR(b.space().mu(s), w, 1e-14);
  }
  EXPECT_DOUBLE_EQ(*b.find("rho0")[0]->lower, 0.5);
  EXPECT_DOUBLE_EQ(*b.find("alpha_p")[0]->lower, 1.0 / 12.0);
}

TEST(ZeroRange, RejectsDegenerateInputs) {
  EXPECT_THROW(build_zero_range(3, {{1.0, 2.0, 3.0}}, {1.0}), InvalidArgument);
  EXPECT_THROW(build_zero_range(2, {{1.0, 0.0}, {1.0, 2.0}}, {0.5, 0.5}), InvalidArgument);
  EXPECT_THROW(build_zero_range(2, {{1.0, 2.0}, {1.0, 2.0}}, {0.6, 0.6}), InvalidArgument);
}

TEST(ZeroRange, PropertyStationarity) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    RandomStream rng(seed, 21);
    const std::size_t n = 2 + seed % 3;
    const int m = 1 + static_cast<int>(seed % 5);
    std::vector<std::vector<double>> lam(n);
    std::vector<double> p(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int l = 0; l < m; ++l) lam[i].push_back(acc += rng.uniform(0.2, 2.0));
      z += p[i] = rng.uniform(0.1, 1.0);
    }
    for (double& v : p) v /= z;
    p.back() = 1.0;
    for (std::size_t i = 0; i + 1 < n; ++i) p.back() -= p[i];
    auto b = build_zero_range(m, lam, p);
    EXPECT_LT(max_abs(stationarity_residual(b.kernel)), 1e-10) << seed;
    EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  }
}

TEST(Erg, DeltaCalculator) {
  EXPECT_EQ(erg_graph_delta({0.3}, {1}).delta, 0.0);
  auto d = erg_graph_delta({0.2, 0.1}, {1, 3});
  EXPECT_NEAR(d.delta, 0.3, 1e-15);
  ASSERT_EQ(d.predicted.size(), 2u);
  EXPECT_NEAR(*d.predicted[0].lower, 0.7, 1e-15);
  EXPECT_TRUE(d.predicted[1].c_unspecified);
  EXPECT_TRUE(erg_graph_delta({0.2, 0.5}, {1, 3}).predicted.empty());
}

TEST(Erg, SmallGraphMeasure) {
  auto b = build_erg(3, {0.1, 0.05}, {"edge", "triangle"});
  EXPECT_EQ(b.space().size(), 8u);
  EXPECT_TRUE(check_detailed_balance(b.kernel).empty());
  // H = n^2 (g1 N_edge / n^2 + g2 N_tri / n^3) with N counting injective maps.
  const double full = 9.0 * (0.1 * 6.0 / 9.0 + 0.05 * 6.0 / 27.0);
  const double empty = 0.0;
  EXPECT_NEAR(b.space().mu(find_config(b, {1, 1, 1})) / b.space().mu(find_config(b, {0, 0, 0})),
              std::exp(empty - full), 1e-13);
  EXPECT_THROW(build_erg(3, {0.1}, {"triangle"}), InvalidArgument);
}

TEST(Metropolis, DetailedBalanceOnScpRelation) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    RandomStream rng(seed, 5);
    std::vector<std::vector<int>> configs;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) configs.push_back({a, b, c});
    std::vector<double> w(configs.size());
    for (double& v : w) v = rng.uniform(0.1, 1.0);
    auto space = FiniteSpace::from_weights(w);
    auto pairs = scp_relation(configs);
    auto k = metropolis_kernel(space, pairs, 1.0 / 6.0);
    EXPECT_TRUE(check_detailed_balance(k).empty());
    EXPECT_LT(max_abs(stationarity_residual(k)), 1e-14);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t e = k.row_begin(j); e < k.row_end(j); ++e) EXPECT_LE(k.rate_at(e), 1.0 / 6.0 + 1e-15);
  }
  EXPECT_EQ(scp_relation({{0, 1}, {1, 0}, {1, 1}}).size(), 3u);
}

TEST(Zoo, PropertyEstimatesRespectPredictions) {
  std::vector<ModelBundle> zoo;
  zoo.push_back(build_interchange(4));
  zoo.push_back(build_multislice({2, 2}));
  zoo.push_back(build_zero_range(4, std::vector<std::vector<double>>(3, {1.0, 2.0, 3.0, 4.0}), {1.0 / 3, 1.0 / 3, 1.0 / 3}));
  zoo.push_back(build_hardcore(5, star_edges(4), 0.125));
  zoo.push_back(build_glauber(ProductSpec::from_marginals({{0.3, 0.7}, {0.5, 0.5}, {0.1, 0.9}})));
  auto J = zeros(3);
  J[0][1] = J[1][0] = 0.2;
  J[1][2] = J[2][1] = -0.15;
  zoo.push_back(build_ising(J, {0.1, 0.0, -0.2}));
  OptimizerOptions opts;
  opts.starts = 12;
  for (const auto& b : zoo) {
    const std::string name = b.metadata["model"].get<std::string>();
    ASSERT_LE(b.space().size(), 200u);
    EXPECT_TRUE(check_detailed_balance(b.kernel).empty()) << name;
    ConstantEstimator est(b.kernel, opts);
    for (const auto& pb : b.predicted) {
      if (pb.c_unspecified || !pb.lower) continue;
      if (pb.kind == "rho0") {
        const double v = est.mlsi().value;
        EXPECT_GE(v, *pb.lower - one_sided_slack(*pb.lower)) << name;
      } else if (pb.kind == "rho1") {
        const double v = est.lsi().value;
        EXPECT_GE(v, *pb.lower - one_sided_slack(*pb.lower)) << name;
      } else if (pb.kind == "lambda") {
        EXPECT_GE(est.poincare().value, *pb.lower - 1e-8) << name;
      } else if (pb.kind == "alpha_p") {
        for (double p : {1.2, 2.0}) {
          const double v = est.beckner_p(p).value;
          EXPECT_GE(v, pb.lower_at(p) - one_sided_slack(pb.lower_at(p))) << name << " p " << p;
        }
      } else if (pb.kind == "dobrushin_alpha") {
        EXPECT_GE(b.metadata["dobrushin_alpha"].get<double>(), *pb.lower - 1e-12) << name;
      }
    }
  }
}
