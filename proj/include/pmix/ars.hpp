#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pmix/error.hpp"
#include "pmix/ledger.hpp"
#include "pmix/piecewise_exp.hpp"
#include "pmix/special.hpp"

namespace pmix {

using LogDensity = std::function<double(double)>;

// Central-difference derivative; diagnostics only.
inline LogDensity numeric_derivative(LogDensity h) {
  return [h = std::move(h)](double x) {
    const double step = 1e-6 * std::max(1.0, std::abs(x));
    return (h(x + step) - h(x - step)) / (2.0 * step);
  };
}

struct Envelope {
  double lo = 0.0, hi = 0.0;
  std::vector<double> x, hx, dhx;
  std::vector<double> knots;  // v_0 = lo < ... < v_m = hi
  PiecewiseExponential upper_density;

  std::size_t size() const { return x.size(); }

  double upper(double y) const {
    std::size_t j = std::upper_bound(knots.begin() + 1, knots.end() - 1, y) - (knots.begin() + 1);
    return hx[j] + (y - x[j]) * dhx[j];
  }

  double lower(double y) const {
    if (y < x.front() || y > x.back()) return neg_inf;
    std::size_t j = std::upper_bound(x.begin(), x.end(), y) - x.begin();
    if (j == x.size()) return hx.back();
    if (j == 0) return hx.front();
    const double w = (y - x[j - 1]) / (x[j] - x[j - 1]);
    return (1.0 - w) * hx[j - 1] + w * hx[j];
  }

  double log_normalizer() const { return upper_density.log_total(); }
};

inline Envelope envelope_build(const LogDensity& h, const LogDensity& dh, std::vector<double> abscissae, double lo,
                               double hi) {
  if (!(lo < hi)) throw ConfigurationError("envelope interval must have lo < hi");
  std::sort(abscissae.begin(), abscissae.end());
  abscissae.erase(std::unique(abscissae.begin(), abscissae.end()), abscissae.end());
  if (abscissae.size() < 2) throw ConfigurationError("envelope needs at least two distinct abscissae");
  if (abscissae.front() < lo || abscissae.back() > hi) throw ConfigurationError("abscissa outside the interval");

  Envelope env;
  env.lo = lo;
  env.hi = hi;
  env.x = std::move(abscissae);
  const std::size_t m = env.x.size();
  env.hx.resize(m);
  env.dhx.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    env.hx[j] = h(env.x[j]);
    env.dhx[j] = dh(env.x[j]);
    if (!std::isfinite(env.hx[j]) || !std::isfinite(env.dhx[j]))
      throw ConcavityViolation("log density or derivative not finite at an abscissa");
  }
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double tol = 1e-10 * std::max({1.0, std::abs(env.dhx[j]), std::abs(env.dhx[j + 1])});
    if (env.dhx[j] < env.dhx[j + 1] - tol) throw ConcavityViolation("derivative increases between abscissae");
  }

  env.knots.resize(m + 1);
  env.knots.front() = lo;
  env.knots.back() = hi;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double x0 = env.x[j], x1 = env.x[j + 1];
    const double den = env.dhx[j] - env.dhx[j + 1];
    double v;
    if (den <= 1e-12 * std::max({1.0, std::abs(env.dhx[j]), std::abs(env.dhx[j + 1])})) {
      v = 0.5 * (x0 + x1);
    } else {
      v = (env.hx[j + 1] - env.hx[j] - x1 * env.dhx[j + 1] + x0 * env.dhx[j]) / den;
      v = std::clamp(v, x0, x1);
    }
    env.knots[j + 1] = v;
  }

  std::vector<LinearPiece> pieces;
  pieces.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double a = env.knots[j], b = env.knots[j + 1];
    pieces.push_back({a, b, env.hx[j] + (a - env.x[j]) * env.dhx[j], env.dhx[j]});
  }
  env.upper_density = PiecewiseExponential(std::move(pieces));
  return env;
}

inline double envelope_sample(const Envelope& env, Substream& s) { return env.upper_density.sample(s); }

struct ArsConfig {
  bool adapt = true;
  std::size_t proposal_cap = 1000000;
  std::size_t max_abscissae = 64;
};

// Five equally spaced interior points.
inline std::vector<double> default_abscissae(double lo, double hi) {
  std::vector<double> xs;
  for (int j = 1; j <= 5; ++j) xs.push_back(lo + (hi - lo) * j / 6.0);
  return xs;
}

class AdaptiveRejectionSampler {
 public:
  AdaptiveRejectionSampler(LogDensity h, LogDensity dh, double lo, double hi, ArsConfig cfg = {},
                           std::vector<double> abscissae = {})
      : h_(std::move(h)), dh_(std::move(dh)), cfg_(cfg) {
    if (abscissae.empty()) abscissae = default_abscissae(lo, hi);
    env_ = envelope_build(h_, dh_, std::move(abscissae), lo, hi);
  }

  double sample(Substream& s) {
    for (std::size_t k = 0; k < cfg_.proposal_cap; ++k) {
      ++proposals_;
      const double y = envelope_sample(env_, s);
      const double w = s.uniform();
      const double u = env_.upper(y);
      const double log_w = std::log(w);
      if (log_w <= env_.lower(y) - u) {
        ++squeezed_;
        return y;
      }
      const double hy = h_(y);
      ++evaluations_;
      const bool accept = log_w <= hy - u;
      if (cfg_.adapt && env_.size() < cfg_.max_abscissae) add_abscissa(y);
      if (accept) return y;
    }
    throw PathologicalTarget("adaptive rejection sampling exceeded its proposal cap");
  }

  const Envelope& envelope() const { return env_; }
  std::size_t proposals() const { return proposals_; }
  std::size_t squeezed() const { return squeezed_; }
  std::size_t evaluations() const { return evaluations_; }

 private:
  void add_abscissa(double y) {
    auto xs = env_.x;
    if (std::find(xs.begin(), xs.end(), y) != xs.end()) return;
    xs.push_back(y);
    env_ = envelope_build(h_, dh_, std::move(xs), env_.lo, env_.hi);
  }

  LogDensity h_, dh_;
  ArsConfig cfg_;
  Envelope env_;
  std::size_t proposals_ = 0, squeezed_ = 0, evaluations_ = 0;
};

inline double ars_sample(const LogDensity& h, const LogDensity& dh, double lo, double hi, Substream& s,
                         bool adapt = true, std::size_t proposal_cap = 1000000) {
  AdaptiveRejectionSampler sampler(h, dh, lo, hi, ArsConfig{adapt, proposal_cap, 64});
  return sampler.sample(s);
}

}  // namespace pmix
