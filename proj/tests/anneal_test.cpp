#include <gtest/gtest.h>

#include <cmath>

#include "pmix/anneal.hpp"

using namespace pmix;

TEST(Anneal, ConstantObjective) {
  SearchSpace space{{{1, 3}}, {{0.0, 1.0}, {2.0, 5.0}}};
  Substream s(1);
  const auto r = anneal_optimize([](const SearchPoint&) { return 4.25; }, space, Sense::minimize, {}, s);
  EXPECT_DOUBLE_EQ(r.value, 4.25);
}

TEST(Anneal, SeparableQuadraticMinimum) {
  SearchSpace space{{}, {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}};
  const double c[3] = {0.3, 0.77, 0.05};
  auto f = [&](const SearchPoint& p) {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) acc += (p.values[k] - c[k]) * (p.values[k] - c[k]);
    return acc;
  };
  Substream s(2);
  const auto r = anneal_optimize(f, space, Sense::minimize, {}, s);
  EXPECT_LT(r.value, 1e-3);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.argopt.values[k], c[k], 3e-2);
}

TEST(Anneal, MaximizeOnBoundary) {
  SearchSpace space{{}, {{-1.0, 2.0}}};
  Substream s(3);
  const auto r = anneal_optimize([](const SearchPoint& p) { return p.values[0]; }, space, Sense::maximize, {}, s);
  EXPECT_DOUBLE_EQ(r.value, 2.0);
}

namespace {

double rugged(const SearchPoint& p) {
  double acc = 0.0;
  for (std::size_t k = 0; k < p.labels.size(); ++k)
    acc += std::sin(1.3 * p.labels[k] * (k + 1)) + 0.1 * p.labels[k] * p.labels[(k + 1) % p.labels.size()];
  return acc;
}

double brute_force(const SearchSpace& space, Sense sense) {
  double best = sense == Sense::minimize ? 1e300 : -1e300;
  enumerate_space(space, [&](const SearchPoint& p) {
    const double v = rugged(p);
    best = sense == Sense::minimize ? std::min(best, v) : std::max(best, v);
  });
  return best;
}

}  // namespace

TEST(Anneal, DiscreteMatchesEnumeration) {
  SearchSpace space{{{1, 8}, {1, 8}, {1, 8}, {1, 8}}, {}};
  ASSERT_LE(space.discrete_cardinality(), 4096.0);
  for (Sense sense : {Sense::minimize, Sense::maximize}) {
    Substream s(4);
    const auto r = anneal_optimize(rugged, space, sense, {}, s);
    EXPECT_TRUE(r.exhaustive);
    EXPECT_DOUBLE_EQ(r.value, brute_force(space, sense));
  }
}

TEST(Anneal, AnnealingPathFindsDiscreteOptimum) {
  SearchSpace space{{{1, 6}, {1, 6}, {1, 6}}, {}};
  AnnealConfig cfg;
  cfg.exhaustive_limit = 0;
  for (Sense sense : {Sense::minimize, Sense::maximize}) {
    Substream s(5);
    const auto r = anneal_optimize(rugged, space, sense, cfg, s);
    EXPECT_FALSE(r.exhaustive);
    EXPECT_DOUBLE_EQ(r.value, brute_force(space, sense));
  }
}

TEST(Anneal, InfeasiblePointsSkipped) {
  SearchSpace space{{{1, 5}}, {}};
  Substream s(6);
  auto f = [](const SearchPoint& p) { return p.labels[0] % 2 ? std::nan("") : -p.labels[0]; };
  EXPECT_DOUBLE_EQ(anneal_optimize(f, space, Sense::minimize, {}, s).value, -4.0);
  auto none = [](const SearchPoint&) { return std::nan(""); };
  EXPECT_THROW(anneal_optimize(none, space, Sense::minimize, {}, s), ConfigurationError);
}

TEST(Anneal, EmptyFeasibleSet) {
  SearchSpace space{{{3, 2}}, {}};
  Substream s(7);
  EXPECT_THROW(anneal_optimize([](const SearchPoint&) { return 0.0; }, space, Sense::minimize, {}, s),
               ConfigurationError);
  SearchSpace cont{{}, {{1.0, 0.0}}};
  EXPECT_THROW(anneal_optimize([](const SearchPoint&) { return 0.0; }, cont, Sense::minimize, {}, s),
               ConfigurationError);
}

TEST(Anneal, DeterministicGivenStream) {
  SearchSpace space{{{1, 4}}, {{0.0, 3.0}, {-1.0, 1.0}}};
  auto f = [](const SearchPoint& p) { return std::cos(3 * p.values[0]) * p.values[1] + 0.2 * p.labels[0]; };
  Substream a(8), b(8);
  const auto ra = anneal_optimize(f, space, Sense::maximize, {}, a);
  const auto rb = anneal_optimize(f, space, Sense::maximize, {}, b);
  EXPECT_EQ(ra.value, rb.value);
  EXPECT_EQ(ra.argopt, rb.argopt);
}

TEST(Anneal, ConfigValidation) {
  AnnealConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.cooling = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
  cfg = {};
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
}
