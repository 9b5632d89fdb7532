#pragma once

// Densities proportional to exp of a piecewise-linear function on a finite
// interval. Used by the ARS hulls and by the perfect sampler's envelopes.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmix/error.hpp"
#include "pmix/ledger.hpp"
#include "pmix/special.hpp"

namespace pmix {

struct LinearPiece {
  double lo, hi;
  double at_lo;  // log density at lo (may be -inf for a null piece)
  double slope;

  double value(double x) const { return at_lo == neg_inf ? neg_inf : at_lo + slope * (x - lo); }
  double log_mass() const { return log_int_exp_linear(at_lo, slope, hi - lo); }
};

class PiecewiseExponential {
 public:
  PiecewiseExponential() = default;

  explicit PiecewiseExponential(std::vector<LinearPiece> pieces) : pieces_(std::move(pieces)) {
    log_mass_.reserve(pieces_.size());
    for (const auto& p : pieces_) log_mass_.push_back(p.log_mass());
    log_total_ = log_sum_exp(log_mass_);
    cumulative_.resize(pieces_.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < pieces_.size(); ++k) {
      acc += log_total_ == neg_inf ? 0.0 : std::exp(log_mass_[k] - log_total_);
      cumulative_[k] = acc;
    }
    if (!cumulative_.empty()) cumulative_.back() = 1.0;
  }

  const std::vector<LinearPiece>& pieces() const { return pieces_; }
  const std::vector<double>& piece_log_masses() const { return log_mass_; }
  double log_total() const { return log_total_; }
  double lo() const { return pieces_.front().lo; }
  double hi() const { return pieces_.back().hi; }

  // Unnormalized log density.
  double log_value(double x) const {
    if (pieces_.empty() || x < lo() || x > hi()) return neg_inf;
    return pieces_[locate(x)].value(x);
  }

  double log_density(double x) const { return log_value(x) - log_total_; }

  double cdf(double x) const {
    if (x <= lo()) return 0.0;
    if (x >= hi()) return 1.0;
    const std::size_t k = locate(x);
    const double before = k == 0 ? 0.0 : cumulative_[k - 1];
    const auto& p = pieces_[k];
    if (p.at_lo == neg_inf) return before;
    return before + std::exp(log_int_exp_linear(p.at_lo, p.slope, x - p.lo) - log_total_);
  }

  // Inverse-CDF draw using two uniforms: one selects the piece, the other
  // inverts within it.
  double sample(double u_piece, double u_within) const {
    if (log_total_ == neg_inf) throw EnvelopeDegenerate("piecewise exponential density has zero mass");
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u_piece);
    std::size_t k = std::min<std::size_t>(it - cumulative_.begin(), pieces_.size() - 1);
    while (log_mass_[k] == neg_inf && k + 1 < pieces_.size()) ++k;
    return sample_within(pieces_[k], u_within);
  }

  double sample(Substream& s) const {
    const double a = s.uniform(), b = s.uniform();
    return sample(a, b);
  }

  static double sample_within(const LinearPiece& p, double u) {
    const double w = p.hi - p.lo, s = p.slope;
    double x;
    if (std::abs(s * w) < 1e-8) {
      x = p.lo + u * w;
    } else if (s < 0.0) {
      x = p.lo + std::log1p(u * std::expm1(s * w)) / s;
    } else {
      x = p.hi + std::log1p((1.0 - u) * std::expm1(-s * w)) / s;
    }
    return std::clamp(x, p.lo, p.hi);
  }

 private:
  std::size_t locate(double x) const {
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), x,
                               [](double v, const LinearPiece& p) { return v < p.hi; });
    if (it == pieces_.end()) return pieces_.size() - 1;
    return static_cast<std::size_t>(it - pieces_.begin());
  }

  std::vector<LinearPiece> pieces_;
  std::vector<double> log_mass_;
  std::vector<double> cumulative_;
  double log_total_ = neg_inf;
};

}  // namespace pmix
