#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>

namespace pmix {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> xs) {
  double m = neg_inf;
  for (double x : xs) m = std::max(m, x);
  if (m == neg_inf) return neg_inf;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == neg_inf) return a;
  return a + std::log1p(std::exp(b - a));
}

// log(exp(a) - exp(b)) for a >= b.
inline double log_sub_exp(double a, double b) {
  if (b == neg_inf) return a;
  if (b >= a) return neg_inf;
  return a + std::log(-std::expm1(b - a));
}

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

inline double digamma(double x) { return boost::math::digamma(x); }

// Trigamma by upward recurrence to x >= 10 followed by the asymptotic series.
// Written independently of any library implementation so it can serve as a
// cross-check.
inline double trigamma(double x) {
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x, r2 = r * r;
  // 1/x + 1/(2x^2) + sum B_{2k}/x^{2k+1}
  const double series =
      r + 0.5 * r2 +
      r * r2 *
          (1.0 / 6.0 -
           r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0))))));
  return acc + series;
}

// Log of the integral of exp(c + s*y) for y in [0, w].
inline double log_int_exp_linear(double c, double s, double w) {
  if (c == neg_inf || w <= 0.0) return neg_inf;
  const double sw = s * w;
  if (std::abs(sw) < 1e-8) return c + std::log(w) + 0.5 * sw;
  if (sw > 0.0) return c + sw + std::log(-std::expm1(-sw)) - std::log(s);
  return c + std::log(-std::expm1(sw)) - std::log(-s);
}

// log P(delta <= X <= 1-delta) for X ~ Beta(a,b).
inline double log_beta_mass(double a, double b, double delta) {
  if (delta <= 0.0) return 0.0;
  const double lo = boost::math::ibeta(a, b, delta);
  const double hi_tail = boost::math::ibetac(a, b, 1.0 - delta);
  const double outside = lo + hi_tail;
  if (outside < 0.5) return std::log1p(-outside);
  return std::log(boost::math::ibeta(a, b, 1.0 - delta) - lo);
}

}  // namespace pmix
