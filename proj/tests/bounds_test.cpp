#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pmix/bounds.hpp"

using namespace pmix;

namespace {

CategoricalPanel panel4() {
  return CategoricalPanel({{1, 2, 2, 1, 1}, {2, 2, 2, 1}, {1, 1, 1, 2, 1, 1}, {2, 1, 2, 1, 2}}, 2);
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

FeasibleRegion point_region(const std::vector<int>& Z, const std::vector<int>& C, const PriorConfig& prior) {
  FeasibleRegion r;
  r.Z = IntBox::point(Z);
  r.C = IntBox::point(C);
  r.C_new = IntBox::point(C);
  r.gamma_lo = prior.gamma_lo;
  r.gamma_hi = prior.gamma_hi;
  return r;
}

std::vector<double> cdf_of(const WeightVector& w, int M) {
  std::vector<double> F(M, 1.0);
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) F[k] = acc += w.normalized[k];
  return F;
}

// Random partially coalesced region: each coordinate pinned with
// probability 1/2, otherwise a random interval.
FeasibleRegion random_region(std::mt19937_64& rng, int n, int M, const PriorConfig& prior) {
  auto box = [&](int len, int hi) {
    IntBox b;
    for (int q = 0; q < len; ++q) {
      int a = std::uniform_int_distribution<int>(1, hi)(rng), c = std::uniform_int_distribution<int>(1, hi)(rng);
      if (rng() % 2) c = a;
      b.lo.push_back(std::min(a, c));
      b.hi.push_back(std::max(a, c));
    }
    return b;
  };
  FeasibleRegion r;
  r.Z = box(n, M);
  r.C = box(M, M);
  r.C_new = box(M, M);
  r.C_new.lo[0] = 1;  // keep at least one valid prefix
  r.gamma_lo = prior.gamma_lo;
  r.gamma_hi = prior.gamma_hi;
  return r;
}

std::vector<int> random_in(std::mt19937_64& rng, const IntBox& b) {
  std::vector<int> v;
  for (std::size_t q = 0; q < b.size(); ++q) v.push_back(std::uniform_int_distribution<int>(b.lo[q], b.hi[q])(rng));
  return v;
}

Matrix random_gamma(std::mt19937_64& rng, const FeasibleRegion& r) {
  Matrix g = r.gamma_lo;
  for (int s = 0; s < g.rows(); ++s)
    for (int t = 0; t < g.cols(); ++t)
      g(s, t) += (r.gamma_hi(s, t) - r.gamma_lo(s, t)) * std::uniform_real_distribution<double>(0, 1)(rng);
  return g;
}

bool sandwiched(const BoundPair& p, const std::vector<double>& F) {
  for (int v = 0; v < p.size(); ++v)
    if (F[v] < p.FL[v] || F[v] > p.FU[v]) return false;
  return true;
}

}  // namespace

TEST(ApplyLabel, SweepEndsAtSequentialRule) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 2000; ++rep) {
    const int M = 2 + rep % 5;
    std::vector<int> P(M), C(M);
    for (int& v : P) v = std::uniform_int_distribution<int>(1, M)(rng);
    for (int j = 1; j <= M; ++j) {
      const int k = clusters_without(j, P).k;
      C[j - 1] = std::uniform_int_distribution<int>(1, k + 1)(rng);
      ASSERT_TRUE(apply_label(P, j, C[j - 1]));
    }
    EXPECT_EQ(first_appearance(P), sequential_rule(C));
  }
}

TEST(ApplyLabel, RejectsLabelAboveFreshCluster) {
  std::vector<int> P{1, 1, 1};
  EXPECT_FALSE(apply_label(P, 2, 3));
  EXPECT_TRUE(apply_label(P, 2, 2));
  EXPECT_EQ(first_appearance(P), (std::vector<int>{1, 2, 1}));
}

TEST(BoundZ, SingletonWithPinnedPhiIsExactConditional) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 3, 1.0);
  const MarginalModel model(panel, prior);
  const std::vector<int> Z{1, 2, 3, 1}, C{1, 2, 1};
  auto region = point_region(Z, C, prior);
  region.phi = std::vector<Matrix>{mat2(0.7, 0.3, 0.4, 0.6), mat2(0.2, 0.8, 0.5, 0.5)};
  ChainState st;
  st.Z = Z;
  st.S = sequential_rule(C);
  st.C = C;
  st.k = 2;
  st.Phi = *region.phi;
  st.gamma = prior.gamma_lo;
  for (int i = 1; i <= 4; ++i) {
    const auto res = bound_z_cdf(i, region, model, {}, 7);
    const auto F = cdf_of(fc_z_weights(i, st, panel), 3);
    for (int v = 0; v < 3; ++v) {
      EXPECT_EQ(res.pair.FL[v], res.pair.FU[v]);
      EXPECT_NEAR(res.pair.FL[v], F[v], 1e-15);
    }
    EXPECT_EQ(res.pair.FL[2], 1.0);
    EXPECT_EQ(res.pair.FU[2], 1.0);
  }
}

TEST(BoundZ, SingletonMarginalizedMatchesCollapsedConditional) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 3, 1.5);
  const MarginalModel model(panel, prior);
  const std::vector<int> Z{1, 3, 3, 2}, C{1, 2, 2};
  const auto region = point_region(Z, C, prior);
  ChainState st;
  st.Z = Z;
  st.S = sequential_rule(C);
  st.gamma = prior.gamma_lo;
  for (int i = 1; i <= 4; ++i) {
    const auto res = bound_z_cdf(i, region, model, {}, 8);
    const auto F = cdf_of(marginalized_z_weights(i, st, panel, prior), 3);
    for (int v = 0; v < 3; ++v) EXPECT_NEAR(res.pair.FL[v], F[v], 1e-14);
    EXPECT_EQ(res.pair.FL, res.pair.FU);
  }
}

TEST(BoundC, SingletonWithPinnedPhiIsExactConditional) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 3, 1.0);
  const MarginalModel model(panel, prior);
  const std::vector<int> Z{1, 2, 3, 1}, C{1, 2, 1};
  auto region = point_region(Z, C, prior);
  region.phi = std::vector<Matrix>{mat2(0.7, 0.3, 0.4, 0.6), mat2(0.2, 0.8, 0.5, 0.5)};
  ChainState st;
  st.Z = Z;
  st.S = sequential_rule(C);
  st.C = C;
  st.k = 2;
  st.Phi = *region.phi;
  st.gamma = prior.gamma_lo;
  // Slot 1 sees the old partition unchanged.
  const auto res = bound_c_cdf(1, region, model, {}, 9);
  const auto F = cdf_of(fc_c_weights(1, st, panel, prior), 3);
  for (int v = 0; v < 3; ++v) {
    EXPECT_EQ(res.pair.FL[v], res.pair.FU[v]);
    EXPECT_NEAR(res.pair.FL[v], F[v], 1e-15);
  }
  // Slot 2 after slot 1 took label 1, i.e. joined slot 2's cluster.
  region.C_new = IntBox::point(std::vector<int>{1, 1, 1});
  const auto res2 = bound_c_cdf(2, region, model, {}, 9);
  std::vector<int> P = st.S;
  ASSERT_TRUE(apply_label(P, 1, 1));
  st.S = first_appearance(P);
  EXPECT_EQ(st.S, (std::vector<int>{1, 1, 2}));
  const auto F2 = cdf_of(fc_c_weights(2, st, panel, prior), 3);
  for (int v = 0; v < 3; ++v) EXPECT_NEAR(res2.pair.FL[v], F2[v], 1e-15);
  EXPECT_EQ(res2.pair.FL, res2.pair.FU);
}

TEST(BoundC, ManualStartsOrderClusterCounts) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 4, 1.0);
  const MarginalModel model(panel, prior);
  FeasibleRegion r;
  r.Z = IntBox({1, 1, 1, 1}, {4, 4, 4, 4});
  r.C = IntBox({1, 1, 1, 1}, {4, 4, 4, 4});
  r.C_new = IntBox({1, 1, 1, 1}, {1, 1, 1, 1});
  r.gamma_lo = prior.gamma_lo;
  r.gamma_hi = prior.gamma_hi;
  for (int j = 1; j <= 4; ++j) {
    const auto res = bound_c_cdf(j, r, model, {}, 10);
    EXPECT_LE(res.k_sup, res.k_inf) << j;
    EXPECT_TRUE(check_bound_properties(res.pair).ok());
  }
}

TEST(BoundZ, RandomSandwichExhaustive) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 3, 1.5);
  const MarginalModel model(panel, prior);
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const auto r = random_region(rng, 4, 3, prior);
    const int i = 1 + rep % 4;
    const auto res = bound_z_cdf(i, r, model, {}, rep);
    EXPECT_TRUE(res.exhaustive);
    EXPECT_EQ(res.repairs, 0u);
    EXPECT_TRUE(check_bound_properties(res.pair).ok());
    std::vector<double> F;
    for (int probe = 0; probe < 10; ++probe) {
      const auto Z = random_in(rng, r.Z);
      const auto S = sequential_rule(random_in(rng, r.C));
      z_conditional_cdf(i, Z, S, prior.gamma_lo, model, nullptr, F);
      EXPECT_TRUE(sandwiched(res.pair, F));
    }
  }
}

TEST(BoundC, RandomSandwichExhaustive) {
  const auto panel = panel4();
  const auto prior = PriorConfig::fixed_gamma(2, 3, 1.5);
  const MarginalModel model(panel, prior);
  std::mt19937_64 rng(12);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto r = random_region(rng, 4, 3, prior);
    const int j = 1 + rep % 3;
    BoundResult res;
    try {
      res = bound_c_cdf(j, r, model, {}, rep);
    } catch (const ConfigurationError&) {
      continue;  // no valid prefix in this box
    }
    EXPECT_TRUE(check_bound_properties(res.pair).ok());
    std::vector<double> F;
    for (int probe = 0; probe < 10; ++probe) {
      const auto Z = random_in(rng, r.Z);
      const auto S = sequential_rule(random_in(rng, r.C));
      const auto prefix = random_in(rng, r.C_new);
      if (c_conditional_cdf(j, Z, S, std::span<const int>(prefix.data(), j - 1), prior.gamma_lo, model, nullptr, F) <
          0)
        continue;
      ++checked;
      EXPECT_TRUE(sandwiched(res.pair, F));
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(BoundZ, FreeGammaAnnealedSandwich) {
  const auto panel = panel4();
  auto prior = PriorConfig::defaults(2, 3);
  prior.gamma_lo.setConstant(1.0);
  prior.gamma_hi.setConstant(4.0);
  prior.phi_truncation = 0.01;
  const MarginalModel model(panel, prior);
  std::mt19937_64 rng(13);
  BoundsConfig cfg;
  cfg.anneal.iterations = 150;
  cfg.anneal.restarts = 2;
  std::size_t probes = 0, violations = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = random_region(rng, 4, 3, prior);
    const int i = 1 + rep % 4;
    const auto res = bound_z_cdf(i, r, model, cfg, rep);
    EXPECT_FALSE(res.exhaustive);
    EXPECT_TRUE(check_bound_properties(res.pair).ok());
    std::vector<double> F;
    for (int probe = 0; probe < 50; ++probe) {
      const auto Z = random_in(rng, r.Z);
      const auto S = sequential_rule(random_in(rng, r.C));
      z_conditional_cdf(i, Z, S, random_gamma(rng, r), model, nullptr, F);
      ++probes;
      violations += !sandwiched(res.pair, F);
    }
  }
  EXPECT_LT(static_cast<double>(violations) / probes, 0.05);
}

TEST(BoundZ, ThreadCountDoesNotChangeBounds) {
  const auto panel = panel4();
  auto prior = PriorConfig::defaults(2, 3);
  prior.gamma_lo.setConstant(1.0);
  prior.gamma_hi.setConstant(4.0);
  const MarginalModel model(panel, prior);
  std::mt19937_64 rng(14);
  const auto r = random_region(rng, 4, 3, prior);
  BoundsConfig one, three;
  one.anneal.iterations = three.anneal.iterations = 100;
  three.threads = 3;
  const auto a = bound_z_cdf(2, r, model, one, 99);
  const auto b = bound_z_cdf(2, r, model, three, 99);
  EXPECT_EQ(a.pair.FL, b.pair.FL);
  EXPECT_EQ(a.pair.FU, b.pair.FU);
  const auto pg = PriorConfig::fixed_gamma(2, 3, 1.5);
  const MarginalModel fixed(panel, pg);
  auto rf = random_region(rng, 4, 3, pg);
  rf.Z = IntBox({1, 1, 1, 1}, {3, 3, 3, 3});
  const auto c = bound_c_cdf(3, rf, fixed, one, 5), d = bound_c_cdf(3, rf, fixed, three, 5);
  EXPECT_EQ(c.pair.FL, d.pair.FL);
  EXPECT_EQ(c.pair.FU, d.pair.FU);
}

TEST(BoundS, FirstSlotIsAlwaysOne) {
  const auto p = bound_s_cdf(1, IntBox({1, 1, 1}, {3, 3, 3}));
  EXPECT_EQ(p.FL, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(p.FU, p.FL);
}

TEST(BoundS, CoalescedLabelsCollapse) {
  const std::vector<int> C{1, 3, 1, 2};
  for (int j = 1; j <= 4; ++j) {
    const auto p = bound_s_cdf(j, IntBox::point(C));
    EXPECT_EQ(p.FL, p.FU);
    const auto [lo, hi] = invert_bounds(p, 0.5);
    EXPECT_EQ(lo, sequential_rule(C)[j - 1]);
    EXPECT_EQ(hi, lo);
  }
}

TEST(BoundS, JumpsBracketAchievableValues) {
  std::mt19937_64 rng(15);
  for (int rep = 0; rep < 100; ++rep) {
    IntBox b;
    for (int q = 0; q < 5; ++q) {
      const int a = std::uniform_int_distribution<int>(1, 5)(rng), c = std::uniform_int_distribution<int>(1, 5)(rng);
      b.lo.push_back(std::min(a, c));
      b.hi.push_back(std::max(a, c));
    }
    const int j = 1 + rep % 5;
    const auto p = bound_s_cdf(j, b);
    EXPECT_TRUE(check_bound_properties(p).ok());
    const auto [lo, hi] = invert_bounds(p, 0.5);
    for (int probe = 0; probe < 20; ++probe) {
      const int s = sequential_rule(random_in(rng, b))[j - 1];
      EXPECT_LE(lo, s);
      EXPECT_LE(s, hi);
    }
  }
}

TEST(InvertBounds, CollapsedPairIsExactInverse) {
  BoundPair p{{0.2, 0.7, 1.0}, {0.2, 0.7, 1.0}};
  for (double u : {0.1, 0.2, 0.21, 0.7, 0.71, 0.999}) {
    const auto [lo, hi] = invert_bounds(p, u);
    EXPECT_EQ(lo, hi);
    EXPECT_EQ(lo, invert_cdf(p.FL, u));
  }
}

TEST(InvertBounds, UpperTail) {
  BoundPair p{{0.1, 0.5, 1.0}, {0.6, 0.9, 1.0}};
  const auto [lo, hi] = invert_bounds(p, std::nextafter(1.0, 0.0));
  EXPECT_EQ(lo, 3);
  EXPECT_EQ(hi, 3);
}

TEST(InvertBounds, RandomSandwich) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> U(0, 1);
  for (int rep = 0; rep < 1000; ++rep) {
    const int m = 2 + rep % 6;
    BoundPair p;
    std::vector<double> F(m);
    std::vector<double> a(m), b(m), c(m);
    for (int v = 0; v < m; ++v) {
      double x[3] = {U(rng), U(rng), U(rng)};
      std::sort(x, x + 3);
      a[v] = x[0];
      c[v] = x[1];
      b[v] = x[2];
    }
    // Cumulative max keeps all three nondecreasing and ordered.
    for (int v = 1; v < m; ++v) {
      a[v] = std::max(a[v], a[v - 1]);
      c[v] = std::max(c[v], c[v - 1]);
      b[v] = std::max(b[v], b[v - 1]);
    }
    for (int v = 0; v < m; ++v) c[v] = std::clamp(c[v], a[v], b[v]);
    a.back() = b.back() = c.back() = 1.0;
    p.FL = a;
    p.FU = b;
    const double u = U(rng);
    const auto [lo, hi] = invert_bounds(p, u);
    const int x = invert_cdf(c, u);
    EXPECT_LE(lo, x);
    EXPECT_LE(x, hi);
  }
}

TEST(Monotonize, ConservativeDirection) {
  BoundPair p{{0.3, 0.2, 0.6, 0.9}, {0.5, 0.4, 0.8, 0.95}};
  monotonize(p);
  EXPECT_EQ(p.FL, (std::vector<double>{0.2, 0.2, 0.6, 1.0}));
  EXPECT_EQ(p.FU, (std::vector<double>{0.5, 0.5, 0.8, 1.0}));
  EXPECT_TRUE(check_bound_properties(p).ok());
}

TEST(BoundChecks, DetectBrokenPairs) {
  EXPECT_FALSE(check_bound_properties(BoundPair{{0.5, 0.4, 1.0}, {0.6, 0.7, 1.0}}).monotone);
  EXPECT_FALSE(check_bound_properties(BoundPair{{0.5, 0.9}, {0.6, 0.95}}).one_at_top);
  EXPECT_FALSE(check_bound_properties(BoundPair{{0.7, 1.0}, {0.6, 1.0}}).ordered);
}
