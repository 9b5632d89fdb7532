#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "pmix/error.hpp"
#include "pmix/ledger.hpp"
#include "pmix/model.hpp"
#include "pmix/special.hpp"

namespace pmix {

struct WeightVector {
  std::vector<double> log_weights;
  std::vector<double> normalized;

  static WeightVector from_log(std::vector<double> lw) {
    WeightVector w;
    const double total = log_sum_exp(lw);
    if (!std::isfinite(total)) throw DegenerateConditional("conditional has zero total mass");
    w.normalized.resize(lw.size());
    for (std::size_t k = 0; k < lw.size(); ++k) w.normalized[k] = std::exp(lw[k] - total);
    w.log_weights = std::move(lw);
    return w;
  }

  std::size_t size() const { return normalized.size(); }

  // Inverse CDF on 1..size(); the top value absorbs rounding.
  int invert(double u) const {
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < normalized.size(); ++k) {
      acc += normalized[k];
      if (acc >= u) return static_cast<int>(k) + 1;
    }
    return static_cast<int>(normalized.size());
  }
};

// Cumulative distribution of normalized log weights written into `cdf`;
// the last entry is exactly 1. Shared by every discrete update so that bound
// computations and single-chain moves round identically.
inline void cdf_from_log_weights(std::span<const double> lw, std::span<double> cdf) {
  double m = neg_inf;
  for (double x : lw) m = std::max(m, x);
  if (!std::isfinite(m)) throw DegenerateConditional("conditional has zero total mass");
  double total = 0.0;
  for (std::size_t k = 0; k < lw.size(); ++k) {
    cdf[k] = std::exp(lw[k] - m);
    total += cdf[k];
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < lw.size(); ++k) {
    acc += cdf[k];
    cdf[k] = acc / total;
  }
  cdf[lw.size() - 1] = 1.0;
}

inline int invert_cdf(std::span<const double> cdf, double u) {
  for (std::size_t k = 0; k + 1 < cdf.size(); ++k)
    if (cdf[k] >= u) return static_cast<int>(k) + 1;
  return static_cast<int>(cdf.size());
}

// ---- clusters -------------------------------------------------------------

// Summed counts of all series whose slot belongs to component `ell` of S.
inline CountMatrix cluster_counts(int ell, std::span<const int> Z, std::span<const int> S,
                                  const CategoricalPanel& panel) {
  CountMatrix acc = CountMatrix::Zero(panel.K, panel.K);
  for (std::size_t i = 0; i < Z.size(); ++i)
    if (S[Z[i] - 1] == ell) acc += panel.counts[i];
  return acc;
}

inline CountMatrix slot_counts(int r, std::span<const int> Z, const CategoricalPanel& panel) {
  CountMatrix acc = CountMatrix::Zero(panel.K, panel.K);
  for (std::size_t i = 0; i < Z.size(); ++i)
    if (Z[i] == r) acc += panel.counts[i];
  return acc;
}

// Clusters formed by the slots other than `r`, in order of first appearance.
struct SlotClusters {
  std::vector<int> label;          // per slot, 1..k; 0 for the excluded slot
  std::vector<int> size;           // M_l
  int k = 0;
};

inline SlotClusters clusters_without(int r, std::span<const int> partition) {
  SlotClusters out;
  out.label.assign(partition.size(), 0);
  std::vector<std::pair<int, int>> seen;
  for (std::size_t j = 0; j < partition.size(); ++j) {
    if (static_cast<int>(j) + 1 == r) continue;
    int found = 0;
    for (auto& [v, l] : seen)
      if (v == partition[j]) found = l;
    if (!found) {
      found = static_cast<int>(seen.size()) + 1;
      seen.emplace_back(partition[j], found);
      out.size.push_back(0);
    }
    out.label[j] = found;
    ++out.size[found - 1];
  }
  out.k = static_cast<int>(seen.size());
  return out;
}

// ---- full conditionals with Phi present ----------------------------------

inline WeightVector fc_z_weights(int i, const ChainState& state, const CategoricalPanel& panel) {
  const int M = static_cast<int>(state.S.size());
  std::vector<double> lw(M);
  for (int r = 1; r <= M; ++r) lw[r - 1] = loglik_series(panel.counts[i - 1], state.theta(r));
  return WeightVector::from_log(std::move(lw));
}

// Log Dirichlet-multinomial integral of a count matrix under Dirichlet(gamma)
// rows, times the Dirichlet(gamma + N) probability that every stick fraction
// of every row lies in [delta, 1 - delta].
inline double log_cluster_marginal(const CountMatrix& N, const Matrix& gamma, double delta) {
  const int K = static_cast<int>(gamma.rows());
  double acc = 0.0;
  for (int s = 0; s < K; ++s) {
    double gsum = 0.0, nsum = 0.0;
    for (int t = 0; t < K; ++t) {
      gsum += gamma(s, t);
      nsum += N(s, t);
      acc += std::lgamma(N(s, t) + gamma(s, t)) - std::lgamma(gamma(s, t));
    }
    acc += std::lgamma(gsum) - std::lgamma(gsum + nsum);
    if (delta > 0.0) {
      double tail = gsum + nsum;
      for (int t = 0; t + 1 < K; ++t) {
        const double a = N(s, t) + gamma(s, t);
        tail -= a;
        acc += log_beta_mass(a, tail, delta);
      }
    }
  }
  return acc;
}

// Configuration update with Phi present: weights over joining each existing
// component of S_{-r} or opening a new one.
inline WeightVector fc_c_weights(int r, const ChainState& state, const CategoricalPanel& panel,
                                 const PriorConfig& prior) {
  const auto cl = clusters_without(r, state.S);
  const CountMatrix D = slot_counts(r, state.Z, panel);
  std::vector<double> lw(cl.k + 1);
  for (int l = 1; l <= cl.k; ++l) {
    int slot = 0;
    while (cl.label[slot] != l) ++slot;
    lw[l - 1] = std::log(static_cast<double>(cl.size[l - 1])) + loglik_series(D, state.theta(slot + 1));
  }
  lw[cl.k] = std::log(prior.alpha) + log_cluster_marginal(D, state.gamma, prior.phi_truncation);
  return WeightVector::from_log(std::move(lw));
}

// Rows of phi_l are Dirichlet(cluster counts + gamma).
inline Matrix sample_phi(int ell, const ChainState& state, const CategoricalPanel& panel, Substream& stream) {
  const CountMatrix N = cluster_counts(ell, state.Z, state.S, panel);
  const int K = panel.K;
  Matrix phi(K, K);
  for (int s = 0; s < K; ++s) {
    double total = 0.0;
    for (int t = 0; t < K; ++t) {
      const double shape = N(s, t) + state.gamma(s, t);
      if (!(shape > 0.0)) throw ConfigurationError("Dirichlet parameter must be positive");
      std::gamma_distribution<double> g(shape, 1.0);
      phi(s, t) = g(stream);
      total += phi(s, t);
    }
    phi.row(s) /= total;
  }
  return phi;
}

struct PhiMoments {
  double mean, variance, heterogeneity;
};

// Conditional mean, variance and row heterogeneity of one transition
// probability.
inline PhiMoments phi_moments(int ell, int s, int t, const ChainState& state, const CategoricalPanel& panel) {
  const CountMatrix N = cluster_counts(ell, state.Z, state.S, panel);
  double sigma = 0.0;
  for (int u = 0; u < panel.K; ++u) sigma += N(s - 1, u) + state.gamma(s - 1, u);
  const double a = N(s - 1, t - 1) + state.gamma(s - 1, t - 1);
  PhiMoments m;
  m.mean = a / sigma;
  m.variance = a * (sigma - a) / (sigma * sigma * (sigma + 1.0));
  m.heterogeneity = sigma;
  return m;
}

struct BetaParams {
  double a, b;
};

// Beta marginal conditional of one transition probability.
inline BetaParams phi_marginal_beta(int ell, int s, int t, const ChainState& state, const CategoricalPanel& panel) {
  const CountMatrix N = cluster_counts(ell, state.Z, state.S, panel);
  BetaParams p{0.0, 0.0};
  for (int u = 1; u <= panel.K; ++u) {
    const double v = N(s - 1, u - 1) + state.gamma(s - 1, u - 1);
    (u == t ? p.a : p.b) += v;
  }
  return p;
}

enum class PhiVariant { full, marginal };

inline double log_fc_phi_elem(double x, int ell, int s, int t, const ChainState& state,
                              const CategoricalPanel& panel, PhiVariant variant) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("transition probability must lie in (0,1)");
  const int K = panel.K;
  if (variant == PhiVariant::marginal) {
    const auto p = phi_marginal_beta(ell, s, t, state, panel);
    return (p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-x);
  }
  // The last entry of the row is the simplex remainder.
  if (t == K) throw DomainError("the last entry of a row is determined by the others");
  const CountMatrix N = cluster_counts(ell, state.Z, state.S, panel);
  const Matrix& phi = state.Phi.at(ell - 1);
  double rest = 1.0;
  for (int u = 1; u < K; ++u)
    if (u != t) rest -= phi(s - 1, u - 1);
  if (!(x < rest)) throw DomainError("transition probability exceeds the simplex remainder");
  const double at = N(s - 1, t - 1) + state.gamma(s - 1, t - 1);
  const double aK = N(s - 1, K - 1) + state.gamma(s - 1, K - 1);
  return (at - 1.0) * std::log(x) + (aK - 1.0) * std::log(rest - x);
}

// Full conditional of gamma_st, unnormalized.
inline double log_fc_gamma(double x, int s, int t, const ChainState& state, const PriorConfig& prior) {
  if (!(x >= prior.gamma_lo(s - 1, t - 1) && x <= prior.gamma_hi(s - 1, t - 1)))
    throw DomainError("gamma value outside its support");
  const int K = static_cast<int>(state.gamma.rows());
  double slog = 0.0;
  for (const auto& phi : state.Phi) slog += std::log(phi(s - 1, t - 1));
  double others = 0.0;
  for (int u = 1; u <= K; ++u)
    if (u != t) others += state.gamma(s - 1, u - 1);
  const double k = static_cast<double>(state.k);
  const double a = prior.a(s - 1, t - 1), b = prior.b(s - 1, t - 1);
  return (x - 1.0) * slog + k * (std::lgamma(x + others) - std::lgamma(x)) + (a - 1.0) * std::log(x) - b * x;
}

inline double dlog_fc_gamma(double x, int s, int t, const ChainState& state, const PriorConfig& prior) {
  const int K = static_cast<int>(state.gamma.rows());
  double slog = 0.0;
  for (const auto& phi : state.Phi) slog += std::log(phi(s - 1, t - 1));
  double others = 0.0;
  for (int u = 1; u <= K; ++u)
    if (u != t) others += state.gamma(s - 1, u - 1);
  const double k = static_cast<double>(state.k);
  return slog + k * (digamma(x + others) - digamma(x)) + (prior.a(s - 1, t - 1) - 1.0) / x - prior.b(s - 1, t - 1);
}

// ---- conditionals with Phi integrated out ---------------------------------

// Marginal of the data given partition and gamma, with per-series-subset
// caching when gamma is pinned. One instance per thread.
class MarginalModel {
 public:
  MarginalModel(const CategoricalPanel& panel, const PriorConfig& prior)
      : panel_(&panel), prior_(&prior), cache_ok_(prior.gamma_fixed() && panel.n() <= 63),
        pinned_(prior.gamma_lo) {}

  const CategoricalPanel& panel() const { return *panel_; }
  const PriorConfig& prior() const { return *prior_; }

  double log_marginal(std::uint64_t mask, const Matrix& gamma) const {
    if (cache_ok_) {
      auto it = cache_.find(mask);
      if (it != cache_.end()) return it->second;
    }
    CountMatrix N = CountMatrix::Zero(panel_->K, panel_->K);
    for (int i = 0; i < panel_->n(); ++i)
      if (mask >> i & 1U) N += panel_->counts[i];
    const double v = log_cluster_marginal(N, cache_ok_ ? pinned_ : gamma, prior_->phi_truncation);
    if (cache_ok_) cache_.emplace(mask, v);
    return v;
  }

  // Log weights of z_i = r for r = 1..M given the other allocations and the
  // slot partition S (labels of any kind; equal labels mean shared phi).
  void z_log_weights(int i, std::span<const int> Z, std::span<const int> S, const Matrix& gamma,
                     std::span<double> out) const {
    check_size();
    const int M = static_cast<int>(S.size());
    masks_.assign(M + 1, 0);
    // masks_ indexed by slot: series of the slot's component, excluding i.
    for (int r = 0; r < M; ++r) {
      std::uint64_t m = 0;
      for (int q = 0; q < static_cast<int>(Z.size()); ++q)
        if (q != i - 1 && S[Z[q] - 1] == S[r]) m |= std::uint64_t{1} << q;
      masks_[r] = m;
    }
    const std::uint64_t bit = std::uint64_t{1} << (i - 1);
    for (int r = 0; r < M; ++r) {
      int first = r;
      for (int q = 0; q < r; ++q)
        if (S[q] == S[r]) {
          first = q;
          break;
        }
      out[r] = first < r ? out[first] : log_marginal(masks_[r] | bit, gamma) - log_marginal(masks_[r], gamma);
    }
  }

  // Log weights of c_j over the k_j components of the other slots (first
  // appearance order) followed by a fresh component; returns k_j.
  int c_log_weights(int j, std::span<const int> Z, std::span<const int> partition, const Matrix& gamma,
                    std::vector<double>& out) const {
    check_size();
    const auto cl = clusters_without(j, partition);
    std::vector<std::uint64_t> cm(cl.k, 0);
    std::uint64_t own = 0;
    for (int q = 0; q < static_cast<int>(Z.size()); ++q) {
      const int slot = Z[q] - 1;
      if (slot == j - 1)
        own |= std::uint64_t{1} << q;
      else
        cm[cl.label[slot] - 1] |= std::uint64_t{1} << q;
    }
    out.resize(cl.k + 1);
    for (int l = 0; l < cl.k; ++l)
      out[l] = std::log(static_cast<double>(cl.size[l])) + log_marginal(cm[l] | own, gamma) - log_marginal(cm[l], gamma);
    out[cl.k] = std::log(prior_->alpha) + log_marginal(own, gamma);
    return cl.k;
  }

 private:
  void check_size() const {
    if (panel_->n() > 63) throw ConfigurationError("marginalized updates support at most 63 series");
  }

  const CategoricalPanel* panel_;
  const PriorConfig* prior_;
  bool cache_ok_;
  Matrix pinned_;
  mutable std::unordered_map<std::uint64_t, double> cache_;
  mutable std::vector<std::uint64_t> masks_;
};

// Unnormalized log weight of z_i = r with Phi integrated out (S-1).
inline double log_marginalized_fc_z(int i, int r, const ChainState& state, const CategoricalPanel& panel,
                                    const PriorConfig& prior) {
  std::vector<int> Z = state.Z;
  Z[i - 1] = r;
  double acc = 0.0;
  for (int l = 1; l <= count_distinct(state.S); ++l)
    acc += log_cluster_marginal(cluster_counts(l, Z, state.S, panel), state.gamma, prior.phi_truncation);
  return acc;
}

// Unnormalized log weight of c_r = ell (ell = k_r + 1 opens a new component).
inline double log_marginalized_fc_c(int r, int ell, const ChainState& state, const CategoricalPanel& panel,
                                    const PriorConfig& prior) {
  MarginalModel model(panel, prior);
  std::vector<double> lw;
  const int k = model.c_log_weights(r, state.Z, state.S, state.gamma, lw);
  if (ell < 1 || ell > k + 1) throw DomainError("configuration label outside 1..k_r+1");
  return lw[ell - 1];
}

inline WeightVector marginalized_z_weights(int i, const ChainState& state, const CategoricalPanel& panel,
                                           const PriorConfig& prior) {
  MarginalModel model(panel, prior);
  std::vector<double> lw(state.S.size());
  model.z_log_weights(i, state.Z, state.S, state.gamma, lw);
  return WeightVector::from_log(std::move(lw));
}

inline WeightVector marginalized_c_weights(int r, const ChainState& state, const CategoricalPanel& panel,
                                           const PriorConfig& prior) {
  MarginalModel model(panel, prior);
  std::vector<double> lw;
  model.c_log_weights(r, state.Z, state.S, state.gamma, lw);
  return WeightVector::from_log(std::move(lw));
}

// ---- diagnostics ---------------------------------------------------------

struct GammaMarginalDiag {
  double h;            // product form
  double log_h_ratio;  // log-Gamma ratio form
  double d2_log_h;
};

// One factor of the gamma conditional with Phi integrated out:
// h(x) = G(x+a)/G(x) * G(x+y)/G(x+y+a+b) for integer y, b.
inline GammaMarginalDiag gamma_marginal_diag(double x, double a, int y, int b) {
  GammaMarginalDiag d{};
  d.log_h_ratio = std::lgamma(x + a) - std::lgamma(x) + std::lgamma(x + y) - std::lgamma(x + y + a + b);
  double h = 1.0;
  for (int i = 1; i <= y; ++i) h *= x + y - i;
  for (int i = 1; i <= y + b; ++i) h /= x + a + y + b - i;
  d.h = h;
  // Differentiating the product form twice.
  double d2 = 0.0;
  for (int m = 0; m < y; ++m) d2 -= 1.0 / ((x + m) * (x + m)) - 1.0 / ((x + a + m) * (x + a + m));
  for (int m = y; m < y + b; ++m) d2 += 1.0 / ((x + a + m) * (x + a + m));
  d.d2_log_h = d2;
  return d;
}

// d^2 log Gamma(x)/dx^2 >= 1/x + 1/(2x^2), evaluated with the series trigamma.
inline bool trigamma_lower_check(double x) {
  if (!(x > 0.0)) throw DomainError("trigamma check needs x > 0");
  return trigamma(x) >= 1.0 / x + 1.0 / (2.0 * x * x);
}

// ---- stick-breaking coordinates of a transition row ----------------------

inline std::vector<double> sticks_from_row(std::span<const double> row) {
  std::vector<double> v(row.size() - 1);
  double rest = 1.0;
  for (std::size_t t = 0; t + 1 < row.size(); ++t) {
    v[t] = rest > 0.0 ? std::clamp(row[t] / rest, 0.0, 1.0) : 0.5;
    rest -= row[t];
  }
  return v;
}

inline void row_from_sticks(std::span<const double> v, std::span<double> row) {
  double rest = 1.0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    row[t] = rest * v[t];
    rest *= 1.0 - v[t];
  }
  row[v.size()] = rest;
}

}  // namespace pmix
