#include <gtest/gtest.h>

#include <cmath>

#include "fineq/io.hpp"

using namespace fineq;

namespace {

const Window kSquare30 = Window::box(2, 1.0, 30.0);

class ConstantFunctional : public PoissonFunctional {
 public:
  std::string name() const override { return "constant"; }
  double evaluate(const PointConfiguration&) const override { return 4.0; }
};

// ||(N - mu)_+||_r for N ~ Poisson(mu), by summing the mass function.
double poisson_upper_moment(double mu, double r) {
  double p = std::exp(-mu), s = 0.0;
  for (int k = 0; k < 400; ++k) {
    if (k > 0) p *= mu / k;
    s += p * std::pow(positive_part(k - mu), r);
  }
  return std::pow(s, 1.0 / r);
}

}  // namespace

TEST(Sampler, ZeroIntensityIsEmpty) {
  auto w = Window::box(2, 1.0, 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_TRUE(sample_process(w, s).empty());
  EXPECT_THROW(Window::box(2, 1.0, -1.0).validate(), InvalidArgument);
  EXPECT_THROW((Window{{0.0}, {0.0}, 1.0}).validate(), InvalidArgument);
}

TEST(Sampler, PointsInsideAndDeterministic) {
  Window w{{-1.0, 2.0, 0.0}, {1.0, 3.0, 0.5}, 40.0};
  const auto a = sample_process(w, 12);
  const auto b = sample_process(w, 12);
  EXPECT_EQ(a.coords(), b.coords());
  EXPECT_NO_THROW(a.validate(w));
  EXPECT_EQ(a.dimension(), 3u);
}

TEST(Sampler, CountMeanAndVariance) {
  const auto st = count_statistics(Window::box(2, 1.0, 50.0), 10000, 3);
  EXPECT_NEAR(st.mean, 50.0, 3.0 * st.mean_stderr);
  EXPECT_NEAR(st.variance, 50.0, 3.0 * st.variance_stderr);
}

TEST(Sampler, DisjointBoxesIndependent) {
  const auto w = Window::box(2, 1.0, 20.0);
  const std::size_t n = 20000;
  // Contingency table of (left count, right count) in tertile bins.
  auto bin = [](std::size_t c) { return c <= 8 ? 0 : (c <= 11 ? 1 : 2); };
  double table[3][3] = {};
  for (std::size_t s = 0; s < n; ++s) {
    const auto eta = sample_replica(w, 8, s);
    std::size_t left = 0;
    for (std::size_t i = 0; i < eta.size(); ++i) left += eta.point(i)[0] < 0.5;
    table[bin(left)][bin(eta.size() - left)] += 1.0;
  }
  double rows[3] = {}, cols[3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      rows[i] += table[i][j];
      cols[j] += table[i][j];
    }
  double chi2 = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double e = rows[i] * cols[j] / static_cast<double>(n);
      chi2 += (table[i][j] - e) * (table[i][j] - e) / e;
    }
  EXPECT_LT(chi2, 18.47);  // 0.999 quantile, 4 degrees of freedom
}

TEST(Sampler, CountCltAtLargeIntensity) {
  const auto st = count_statistics(Window::box(2, 1.0, 400.0), 10000, 6);
  EXPECT_LT(st.ks_statistic, st.ks_threshold);
}

TEST(Functionals, ConsistencyOfLibrary) {
  const auto w = Window::box(2, 1.0, 25.0);
  for (const std::string name : {"count", "gilbert_edges", "gilbert_triangles", "ball_covering"}) {
    auto F = make_functional(name, 0.2, w);
    EXPECT_EQ(consistency_defect(*F, w, 200, 4), 0.0) << name;
    EXPECT_EQ(F->name(), name);
  }
  EXPECT_THROW(make_functional("volume", 0.1, w), InvalidArgument);
}

TEST(Functionals, GilbertCountsMatchUStatistics) {
  const auto w = Window::box(2, 1.0, 25.0);
  GilbertEdges edges(0.2);
  GilbertTriangles tri(0.2);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto eta = sample_process(w, s);
    EXPECT_NEAR(u_statistic(gilbert_kernel(2, 0.2), 2, eta), edges.evaluate(eta), 1e-9);
    EXPECT_NEAR(u_statistic(gilbert_kernel(3, 0.2), 3, eta), tri.evaluate(eta), 1e-9);
  }
}

TEST(Mecke, LibraryAtThreeSigma) {
  for (const auto& term : mecke_library(0.1)) {
    const auto m = mecke_check(kSquare30, term, 20000, 11);
    EXPECT_TRUE(m.passed()) << term.name << " z " << m.z();
  }
}

TEST(Mecke, ConstantAndFactorialMoment) {
  const auto lib = mecke_library(0.1);
  const auto one = mecke_check(kSquare30, lib[0], 20000, 2);
  EXPECT_DOUBLE_EQ(one.rhs, 30.0);
  EXPECT_NEAR(one.lhs, 30.0, 4.0 * one.lhs_stderr);
  const auto count = mecke_check(kSquare30, lib[1], 20000, 2);
  EXPECT_NEAR(count.lhs, 900.0, 4.0 * count.lhs_stderr);
  EXPECT_NEAR(count.rhs, 900.0, 4.0 * count.rhs_stderr);
  const auto empty = mecke_check(Window::box(2, 1.0, 0.0), lib[1], 100, 2);
  EXPECT_EQ(empty.lhs, 0.0);
  EXPECT_EQ(empty.rhs, 0.0);
  EXPECT_TRUE(empty.passed());
}

TEST(Gradients, CountAndConstant) {
  CountFunctional count;
  ConstantFunctional c;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto eta = sample_process(kSquare30, s);
    const double n = static_cast<double>(eta.size());
    EXPECT_EQ(gamma_plus_poisson(count, eta, kSquare30, 8, s), n);
    EXPECT_EQ(gamma_plus_poisson(c, eta, kSquare30, 8, s), 0.0);
    RandomStream rng(s, 1);
    const auto g = poisson_gradients(count, eta, kSquare30, 8, rng);
    EXPECT_NEAR(g.gamma, 0.5 * (n + 30.0), 1e-12);
    EXPECT_EQ(g.lambda_square_stderr, 0.0);
  }
}

TEST(Gradients, IncreasingFunctionalsHaveNoLambdaTerm) {
  const auto w = Window::box(2, 1.0, 25.0);
  for (const std::string name : {"count", "gilbert_edges", "gilbert_triangles", "ball_covering"}) {
    auto F = make_functional(name, 0.25, w);
    ASSERT_TRUE(F->increasing());
    for (std::uint64_t s = 0; s < 20; ++s) {
      RandomStream rng(s, 0);
      const auto eta = sample_process(w, rng);
      const auto g = poisson_gradients(*F, eta, w, 32, rng);
      EXPECT_EQ(g.lambda_minus, 0.0) << name;
      EXPECT_EQ(g.gamma_plus, g.eta_plus);
    }
  }
}

TEST(Moments, CountAndGilbertEdges) {
  CountFunctional count;
  GilbertEdges edges(0.1);
  for (const PoissonFunctional* F : {static_cast<const PoissonFunctional*>(&count), static_cast<const PoissonFunctional*>(&edges)}) {
    const auto rep = poisson_moment_check(*F, kSquare30, {2, 4}, 20000, 9);
    EXPECT_TRUE(rep.passed()) << F->name();
    EXPECT_EQ(rep.method, "monte_carlo");
    EXPECT_EQ(rep.rows.size(), 4u);
    for (const auto& row : rep.rows) EXPECT_LE(row.lhs_lower, row.lhs);
  }
  // Count, r = 2: lhs is the standard deviation sqrt(30).
  const auto rep = poisson_moment_check(count, kSquare30, {2}, 20000, 9);
  EXPECT_NEAR(rep.rows[0].lhs, std::sqrt(30.0), 0.1);
  EXPECT_NEAR(rep.rows[0].rhs, poisson_D() * std::sqrt(2.0) * std::sqrt(60.0), 0.5);
}

TEST(Moments, ConstantFunctionalIsZero) {
  ConstantFunctional c;
  const auto rep = poisson_moment_check(c, kSquare30, {2, 3}, 200, 1);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.lhs, 0.0);
    EXPECT_EQ(row.rhs, 0.0);
  }
  EXPECT_TRUE(rep.passed());
}

TEST(SelfBounded, Shapes) {
  const double D = poisson_D();
  EXPECT_EQ(self_bounded_moment_bound(5.0, 0.0, 0.5, 4.0), 0.0);
  const double G = 1.7, r = 3.0;
  EXPECT_NEAR(self_bounded_moment_bound(9.0, G, 0.0, r), 2.0 * D * std::sqrt(r) * G + 2.0 * D * std::sqrt(r) * G, 1e-12);
  for (int m : {2, 3}) {
    const double alpha = 2.0 - 1.0 / m;
    const double EF = 4.0;
    const double expect = 2.0 * D * std::sqrt(r) * std::pow(EF, alpha / 2.0) * std::pow(G, 1.0 - alpha / 2.0) +
                          std::pow(2.0 * D, 2.0 * m) * std::pow(r, m) * G;
    EXPECT_NEAR(self_bounded_moment_bound(EF, G, alpha, r), expect, 1e-9 * expect);
  }
  EXPECT_THROW(self_bounded_moment_bound(1.0, 1.0, 2.0, 2.0), InvalidArgument);
  EXPECT_THROW(self_bounded_moment_bound(1.0, 1.0, 0.5, 1.0), InvalidArgument);
}

TEST(UStatistics, SmallCases) {
  PointConfiguration eta(1, {0.1, 0.4, 0.9});
  const UKernel first = [](std::span<const std::span<const double>> x) { return x[0][0]; };
  EXPECT_NEAR(u_statistic(first, 1, eta), 1.4, 1e-15);
  const UKernel zero = [](std::span<const std::span<const double>>) { return 0.0; };
  EXPECT_EQ(u_statistic(zero, 3, eta), 0.0);
  // Ordered tuples: 3 * 2 pairs.
  const UKernel one = [](std::span<const std::span<const double>>) { return 1.0; };
  EXPECT_EQ(u_statistic(one, 2, eta), 6.0);
  EXPECT_THROW(u_statistic(one, 4, eta), InvalidArgument);
  PointConfiguration big(1, std::vector<double>(400, 0.5));
  EXPECT_THROW(u_statistic(one, 3, big), InvalidArgument);
}

TEST(UStatistics, TailBoundShape) {
  EXPECT_EQ(u_stat_tail_bound(10.0, 2, 1.0, 1.5, 0.0, 1.0), 2.0);
  double prev = 2.0;
  for (double t = 0.1; t < 100.0; t *= 1.5) {
    const double b = u_stat_tail_bound(10.0, 2, 1.0, 1.5, t, 1.0);
    EXPECT_LE(b, prev);
    prev = b;
  }
  // Large t: the t^{2 - alpha} branch is active.
  const double t = 1e4, alpha = 1.5, scale = 1.0 * 4.0 * 1.0;
  EXPECT_NEAR(std::log(u_stat_tail_bound(10.0, 2, 1.0, alpha, t, 1.0) / 2.0), -std::pow(t, 2.0 - alpha) / scale, 1e-9);
  EXPECT_THROW(u_stat_tail_bound(1.0, 2, 1.0, 2.0, 1.0, 1.0), InvalidArgument);
}

TEST(UStatistics, GilbertEdgeTailDominated) {
  const auto study = u_stat_tail_study(kSquare30, 2, 0.1, 1.5, {1, 2, 4, 6, 8, 10}, 20000, 3);
  EXPECT_GT(study.a, 0.0);
  EXPECT_GT(study.C_prime, 0.0);
  for (const auto& row : study.rows) EXPECT_TRUE(row.dominated()) << row.t;
  const auto again = u_stat_tail_study(kSquare30, 2, 0.1, 1.5, {1, 2, 4, 6, 8, 10}, 20000, 3);
  EXPECT_EQ(study.C_prime, again.C_prime);
}

TEST(Empirical, ZeroFunctionAndIndicator) {
  const auto w = Window::box(2, 1.0, 20.0);
  const PointFunction zero = [](std::span<const double>) { return 0.0; };
  const auto z = empirical_process_bound(w, {zero}, 2.0, EmpiricalMode::Z, 1.0, 500, 1);
  EXPECT_EQ(z.bound, 0.0);
  EXPECT_EQ(z.lhs, 0.0);
  // Indicator of the left half: Z = eta(B) ~ Poisson(10).
  const PointFunction left = [](std::span<const double> x) { return x[0] < 0.5 ? 1.0 : 0.0; };
  for (double r : {2.0, 4.0, 6.0}) {
    const auto rep = empirical_process_bound(w, {left}, r, EmpiricalMode::Z, 1.0, 20000, 2);
    EXPECT_NEAR(rep.mean, 10.0, 0.15);
    EXPECT_GE(rep.bound, poisson_upper_moment(10.0, r)) << r;
  }
  EXPECT_THROW(empirical_process_bound(w, {}, 2.0, EmpiricalMode::Z, 1.0, 10, 1), InvalidArgument);
  EXPECT_THROW(empirical_process_bound(w, {left}, 2.0, EmpiricalMode::S, 1.0, 10, 1), InvalidArgument);
}

TEST(Empirical, TwoFunctionClassDominates) {
  const auto w = Window::box(2, 1.0, 20.0);
  const PointFunction a = [](std::span<const double> x) { return x[0]; };
  const PointFunction b = [](std::span<const double> x) { return 1.0 - x[1]; };
  const auto z = empirical_process_bound(w, {a, b}, 4.0, EmpiricalMode::Z, 1.0, 20000, 4);
  EXPECT_GE(z.bound, z.lhs);
  const auto s = empirical_process_bound(w, {a, b}, 4.0, EmpiricalMode::S, 1.0, 20000, 4, 20000);
  EXPECT_GT(s.Sigma, 0.0);
  EXPECT_GE(s.bound, s.lhs);
}
