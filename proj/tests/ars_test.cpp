#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>

#include "pmix/ars.hpp"
#include "stats_support.hpp"

using namespace pmix;

namespace {

const double beta_lo = 0.01, beta_hi = 0.99;
double beta32(double x) { return 2.0 * std::log(x) + std::log1p(-x); }
double dbeta32(double x) { return 2.0 / x - 1.0 / (1.0 - x); }
double gamma31(double x) { return 2.0 * std::log(x) - x; }
double dgamma31(double x) { return 2.0 / x - 1.0; }

double truncated_cdf(double flo, double fhi, double fx) { return (fx - flo) / (fhi - flo); }

void expect_squeeze(const Envelope& env, const LogDensity& h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(env.lo, env.hi);
  for (int k = 0; k < 1000; ++k) {
    const double y = u(rng);
    const double hy = h(y);
    EXPECT_LE(env.lower(y), hy) << "at " << y;
    EXPECT_LE(hy, env.upper(y)) << "at " << y;
  }
}

}  // namespace

TEST(EnvelopeBuild, SymmetricQuadratic) {
  auto h = [](double x) { return -0.5 * x * x; };
  auto dh = [](double x) { return -x; };
  const auto env = envelope_build(h, dh, {-1.0, 1.0}, -3.0, 3.0);
  EXPECT_DOUBLE_EQ(env.knots[1], 0.0);
  EXPECT_DOUBLE_EQ(env.upper(0.0), 0.5);
  EXPECT_DOUBLE_EQ(env.lower(0.0), -0.5);
  EXPECT_LE(env.lower(0.0), h(0.0));
  EXPECT_LE(h(0.0), env.upper(0.0));
  EXPECT_EQ(env.lower(-2.0), neg_inf);
  EXPECT_EQ(env.lower(1.5), neg_inf);
}

TEST(EnvelopeBuild, LinearFunctionHullsCoincide) {
  auto h = [](double x) { return 0.3 - 1.7 * x; };
  auto dh = [](double) { return -1.7; };
  const auto env = envelope_build(h, dh, {0.5, 1.0, 2.5}, 0.0, 3.0);
  for (double y : {0.5, 0.7, 1.3, 2.2, 2.5}) {
    EXPECT_NEAR(env.upper(y), h(y), 1e-14);
    EXPECT_NEAR(env.lower(y), h(y), 1e-14);
  }
}

TEST(EnvelopeBuild, GammaSqueezeAtRandomPoints) {
  const auto env = envelope_build(gamma31, dgamma31, {0.5, 1.5, 3.0, 6.0}, 0.01, 20.0);
  expect_squeeze(env, gamma31, 1);
  for (std::size_t j = 0; j + 1 < env.size(); ++j) {
    EXPECT_GE(env.knots[j + 1], env.x[j]);
    EXPECT_LE(env.knots[j + 1], env.x[j + 1]);
  }
  double total = 0.0;
  for (double lm : env.upper_density.piece_log_masses()) total += std::exp(lm);
  EXPECT_NEAR(std::log(total), env.log_normalizer(), 1e-12);
}

TEST(EnvelopeBuild, ConcavityViolationDetected) {
  auto h = [](double x) { return 0.5 * x * x; };
  auto dh = [](double x) { return x; };
  EXPECT_THROW(envelope_build(h, dh, {-1.0, 1.0}, -2.0, 2.0), ConcavityViolation);
}

TEST(EnvelopeBuild, MoreAbscissaeNeverLoosen) {
  const auto coarse = envelope_build(beta32, dbeta32, {0.2, 0.5, 0.9}, beta_lo, beta_hi);
  const auto fine = envelope_build(beta32, dbeta32, {0.2, 0.35, 0.5, 0.8, 0.9}, beta_lo, beta_hi);
  for (int k = 0; k <= 200; ++k) {
    const double y = beta_lo + (beta_hi - beta_lo) * k / 200.0;
    EXPECT_LE(fine.upper(y), coarse.upper(y) + 1e-12);
    EXPECT_GE(fine.lower(y), coarse.lower(y) - 1e-12);
  }
}

TEST(EnvelopeSample, FlatPieceUniform) {
  auto h = [](double) { return 0.0; };
  auto dh = [](double) { return 0.0; };
  const auto env = envelope_build(h, dh, {1.0, 2.0}, 0.0, 4.0);
  Substream s(5);
  std::vector<double> xs;
  for (int k = 0; k < 10000; ++k) xs.push_back(envelope_sample(env, s));
  EXPECT_GT(testsupport::ks_test(xs, [](double x) { return x / 4.0; }), 0.01);
}

TEST(EnvelopeSample, TruncatedExponentialMean) {
  PiecewiseExponential pe({{0.0, 5.0, 0.0, -1.0}});
  Substream s(6);
  std::vector<double> xs;
  for (int k = 0; k < 20000; ++k) xs.push_back(pe.sample(s));
  const double mean = 1.0 - 5.0 * std::exp(-5.0) / (1.0 - std::exp(-5.0));
  EXPECT_LT(std::abs(testsupport::mean(xs) - mean), 3.0 * testsupport::standard_error(xs));
}

TEST(EnvelopeSample, SymmetricMedian) {
  auto h = [](double x) { return -0.5 * x * x; };
  auto dh = [](double x) { return -x; };
  const auto env = envelope_build(h, dh, {-1.0, 1.0}, -3.0, 3.0);
  Substream s(7);
  std::vector<double> xs;
  const int n = 10000;
  for (int k = 0; k < n; ++k) xs.push_back(envelope_sample(env, s));
  std::nth_element(xs.begin(), xs.begin() + n / 2, xs.end());
  // Median standard error: 1/(2 f(0) sqrt(n)) with f the envelope density at 0.
  const double f0 = std::exp(env.upper(0.0) - env.log_normalizer());
  EXPECT_LT(std::abs(xs[n / 2]), 3.0 / (2.0 * f0 * std::sqrt(static_cast<double>(n))));
}

TEST(EnvelopeSample, PieceFrequenciesMatchMasses) {
  const auto env = envelope_build(gamma31, dgamma31, {0.5, 1.5, 3.0, 6.0}, 0.01, 20.0);
  Substream s(8);
  const auto& pieces = env.upper_density.pieces();
  std::vector<double> observed(pieces.size(), 0.0), expected(pieces.size());
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double y = envelope_sample(env, s);
    for (std::size_t j = 0; j < pieces.size(); ++j)
      if (y >= pieces[j].lo && y <= pieces[j].hi) {
        observed[j] += 1;
        break;
      }
  }
  double stat = 0.0;
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    expected[j] = n * std::exp(env.upper_density.piece_log_masses()[j] - env.log_normalizer());
    stat += (observed[j] - expected[j]) * (observed[j] - expected[j]) / expected[j];
  }
  const double crit = boost::math::quantile(boost::math::complement(
      boost::math::chi_squared(static_cast<double>(pieces.size() - 1)), 0.01));
  EXPECT_LT(stat, crit);
}

TEST(Ars, TruncatedBetaKs) {
  const boost::math::beta_distribution<> beta(3.0, 2.0);
  const double flo = boost::math::cdf(beta, beta_lo), fhi = boost::math::cdf(beta, beta_hi);
  AdaptiveRejectionSampler sampler(beta32, dbeta32, beta_lo, beta_hi);
  Substream s(9);
  std::vector<double> xs;
  for (int k = 0; k < 10000; ++k) xs.push_back(sampler.sample(s));
  const double p = testsupport::ks_test(
      xs, [&](double x) { return truncated_cdf(flo, fhi, boost::math::cdf(beta, x)); });
  EXPECT_GT(p, 0.01);
  expect_squeeze(sampler.envelope(), beta32, 2);
}

TEST(Ars, ConstantTargetUniform) {
  auto h = [](double) { return 1.0; };
  auto dh = [](double) { return 0.0; };
  Substream s(10);
  std::vector<double> xs;
  for (int k = 0; k < 5000; ++k) xs.push_back(ars_sample(h, dh, 2.0, 3.0, s));
  EXPECT_GT(testsupport::ks_test(xs, [](double x) { return x - 2.0; }), 0.01);
}

TEST(Ars, NonAdaptiveMatchesTarget) {
  const boost::math::gamma_distribution<> g(3.0, 1.0);
  const double flo = boost::math::cdf(g, 0.01), fhi = boost::math::cdf(g, 15.0);
  Substream s(11);
  std::vector<double> xs;
  for (int k = 0; k < 5000; ++k) xs.push_back(ars_sample(gamma31, dgamma31, 0.01, 15.0, s, false));
  EXPECT_GT(testsupport::ks_test(xs, [&](double x) { return truncated_cdf(flo, fhi, boost::math::cdf(g, x)); }),
            0.01);
}

TEST(Ars, AdaptiveAcceptanceTightens) {
  AdaptiveRejectionSampler sampler(gamma31, dgamma31, 0.01, 15.0);
  Substream s(12);
  std::vector<double> rates;
  for (int block = 0; block < 5; ++block) {
    const std::size_t before = sampler.proposals();
    for (int k = 0; k < 1000; ++k) sampler.sample(s);
    rates.push_back(1000.0 / static_cast<double>(sampler.proposals() - before));
  }
  for (std::size_t b = 1; b < rates.size(); ++b) {
    const double se = std::sqrt(rates[b] * (1 - rates[b]) / 1000.0) + 1e-3;
    EXPECT_GE(rates[b], rates[b - 1] - 3.0 * se);
  }
  EXPECT_LE(sampler.envelope().size(), 64u);
}

TEST(Ars, ProposalCap) {
  // A sharply peaked target with coarse abscissae rejects often; a cap of
  // one proposal eventually trips.
  auto h = [](double x) { return -5000.0 * (x - 0.5) * (x - 0.5); };
  auto dh = [](double x) { return -10000.0 * (x - 0.5); };
  Substream s(13);
  bool thrown = false;
  for (int k = 0; k < 50 && !thrown; ++k) {
    try {
      ars_sample(h, dh, 0.0, 1.0, s, false, 1);
    } catch (const PathologicalTarget&) {
      thrown = true;
    }
  }
  EXPECT_TRUE(thrown);
}
