#pragma once

// Lower and upper distribution functions for the discrete coordinates of the
// collapsed chain, obtained by optimizing each conditional CDF over the
// values the other, not yet coalesced, coordinates can take.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "pmix/anneal.hpp"
#include "pmix/conditionals.hpp"
#include "pmix/error.hpp"
#include "pmix/ledger.hpp"
#include "pmix/model.hpp"
#include "pmix/parallel.hpp"

namespace pmix {

// ---- conditional CDFs shared by the chain and the bounds -------------------

// Applies configuration label `label` to slot j (1-based) of a value
// partition: join the label-th cluster of the other slots in order of first
// appearance, or open a fresh cluster at k_j + 1. Returns false for labels
// above k_j + 1.
inline bool apply_label(std::vector<int>& partition, int j, int label) {
  const auto cl = clusters_without(j, partition);
  if (label < 1 || label > cl.k + 1) return false;
  if (label <= cl.k) {
    for (std::size_t q = 0; q < partition.size(); ++q)
      if (cl.label[q] == label) {
        partition[j - 1] = partition[q];
        break;
      }
  } else {
    partition[j - 1] = *std::max_element(partition.begin(), partition.end()) + 1;
  }
  return true;
}

// Partition seen by the update of c_j: the previous partition with slots
// 1..j-1 already moved by `prefix`. Empty when a prefix label is invalid.
inline std::optional<std::vector<int>> sweep_partition(std::span<const int> S_old, std::span<const int> prefix) {
  std::vector<int> P(S_old.begin(), S_old.end());
  for (std::size_t q = 0; q < prefix.size(); ++q)
    if (!apply_label(P, static_cast<int>(q) + 1, prefix[q])) return std::nullopt;
  return P;
}

// CDF of z_i over slots 1..M. With `phi` the parameters are present and the
// weights are the likelihoods under theta_r = phi[S_r]; otherwise Phi is
// integrated out.
inline void z_conditional_cdf(int i, std::span<const int> Z, std::span<const int> S, const Matrix& gamma,
                              const MarginalModel& model, const std::vector<Matrix>* phi, std::vector<double>& cdf) {
  const int M = static_cast<int>(S.size());
  std::vector<double> lw(M);
  if (phi) {
    for (int r = 0; r < M; ++r) lw[r] = loglik_series(model.panel().counts[i - 1], phi->at(S[r] - 1));
  } else {
    model.z_log_weights(i, Z, S, gamma, lw);
  }
  cdf.resize(M);
  cdf_from_log_weights(lw, cdf);
}

// CDF of c_j over labels 1..M (padded with ones above k_j + 1). Returns k_j,
// or -1 when the prefix is not a valid label sequence.
inline int c_conditional_cdf(int j, std::span<const int> Z, std::span<const int> S_old, std::span<const int> prefix,
                             const Matrix& gamma, const MarginalModel& model, const std::vector<Matrix>* phi,
                             std::vector<double>& cdf) {
  const auto P = sweep_partition(S_old, prefix);
  if (!P) return -1;
  const int M = static_cast<int>(S_old.size());
  std::vector<double> lw;
  int k;
  if (phi) {
    ChainState st;
    st.Z.assign(Z.begin(), Z.end());
    st.S = first_appearance(*P);
    st.Phi = *phi;
    st.gamma = gamma;
    const auto w = fc_c_weights(j, st, model.panel(), model.prior());
    lw = w.log_weights;
    k = static_cast<int>(lw.size()) - 1;
  } else {
    k = model.c_log_weights(j, Z, *P, gamma, lw);
  }
  cdf.assign(M, 1.0);
  cdf_from_log_weights(lw, std::span<double>(cdf.data(), lw.size()));
  return k;
}

// ---- bound pairs ----------------------------------------------------------

struct BoundPair {
  std::vector<double> FL, FU;  // at v = 1..m

  int size() const { return static_cast<int>(FL.size()); }

  static double step(const std::vector<double>& F, double x) {
    if (x < 1.0) return 0.0;
    const auto v = static_cast<std::size_t>(std::floor(x));
    return v >= F.size() ? 1.0 : F[v - 1];
  }
  double lower(double x) const { return step(FL, x); }
  double upper(double x) const { return step(FU, x); }
};

struct BoundChecks {
  bool zero_below = true, one_at_top = true, monotone = true, right_continuous = true, ordered = true;
  bool ok() const { return zero_below && one_at_top && monotone && right_continuous && ordered; }
};

inline BoundChecks check_bound_properties(const BoundPair& p) {
  BoundChecks c;
  const int m = p.size();
  c.zero_below = p.lower(0.0) == 0.0 && p.upper(0.0) == 0.0 && p.lower(0.999) == 0.0 && p.upper(-3.0) == 0.0;
  c.one_at_top = m > 0 && p.FL.back() == 1.0 && p.FU.back() == 1.0 && p.lower(m + 0.5) == 1.0 && p.upper(m + 7.0) == 1.0;
  for (int v = 1; v <= m; ++v) {
    const double l = p.FL[v - 1], u = p.FU[v - 1];
    if (!(l >= 0.0 && u <= 1.0 && l <= u)) c.ordered = false;
    if (v > 1 && (l < p.FL[v - 2] || u < p.FU[v - 2])) c.monotone = false;
    // Right-continuity on the integer grid: the value at v holds on [v, v+1).
    for (double h : {0.0, 1e-9, 0.5, 0.999999})
      if (p.lower(v + h) != l || p.upper(v + h) != u) c.right_continuous = false;
  }
  return c;
}

// Restores monotonicity toward conservative values: FL is lowered to the
// running minimum from the right, FU raised to the running maximum from the
// left. A valid bound stays valid because every exact CDF is nondecreasing.
inline void monotonize(BoundPair& p) {
  const int m = p.size();
  for (int v = m - 2; v >= 0; --v) p.FL[v] = std::min(p.FL[v], p.FL[v + 1]);
  for (int v = 1; v < m; ++v) p.FU[v] = std::max(p.FU[v], p.FU[v - 1]);
  if (m > 0) p.FL.back() = p.FU.back() = 1.0;
}

// lower = min{v : FU(v) >= u}, upper = min{v : FL(v) >= u}.
inline std::pair<int, int> invert_bounds(const BoundPair& p, double u) {
  return {invert_cdf(p.FU, u), invert_cdf(p.FL, u)};
}

// ---- feasible regions ------------------------------------------------------

struct IntBox {
  std::vector<int> lo, hi;

  IntBox() = default;
  IntBox(std::vector<int> l, std::vector<int> h) : lo(std::move(l)), hi(std::move(h)) {}
  static IntBox point(std::span<const int> v) { return {{v.begin(), v.end()}, {v.begin(), v.end()}}; }

  std::size_t size() const { return lo.size(); }
  bool pinned(std::size_t k) const { return lo[k] == hi[k]; }
  bool contains(std::span<const int> v) const {
    for (std::size_t k = 0; k < v.size(); ++k)
      if (v[k] < lo[k] || v[k] > hi[k]) return false;
    return true;
  }
  double cardinality() const {
    double c = 1.0;
    for (std::size_t k = 0; k < size(); ++k) c = std::min(c * (hi[k] - lo[k] + 1), 1e18);
    return c;
  }
};

struct FeasibleRegion {
  IntBox Z;      // allocations seen by the update
  IntBox C;      // labels of the previous sweep; the old partition is rule(C)
  IntBox C_new;  // labels already drawn in the current sweep (slots 1..j-1)
  Matrix gamma_lo, gamma_hi;
  // Pinned parameters for the Phi-present conditionals; unset means Phi is
  // integrated out.
  std::optional<std::vector<Matrix>> phi;
};

struct BoundsConfig {
  AnnealConfig anneal;
  int threads = 1;
  // Old partitions are enumerated as the distinct values of rule(C) when the
  // label box has at most this many points.
  double partition_enumeration_limit = 1e5;
};

struct BoundResult {
  BoundPair pair;
  std::size_t repairs = 0;  // probes that fell outside the optimized bounds
  std::size_t configurations = 0;
  bool exhaustive = false;
  int k_sup = 0, k_inf = 0;  // k_j at the manual single-cluster and all-distinct starts
};

namespace bounds_detail {

// Distinct partitions rule(C) over a label box.
inline std::vector<std::vector<int>> partitions_of_box(const IntBox& C) {
  std::set<std::vector<int>> seen;
  std::vector<int> c = C.lo;
  const std::size_t d = C.size();
  while (true) {
    seen.insert(sequential_rule(c));
    std::size_t k = 0;
    while (k < d) {
      if (c[k] < C.hi[k]) {
        ++c[k];
        break;
      }
      c[k] = C.lo[k];
      ++k;
    }
    if (k == d) break;
  }
  return {seen.begin(), seen.end()};
}

// Maps search points to (Z, S_old, prefix, gamma) for one update.
class RegionCoder {
 public:
  RegionCoder(const FeasibleRegion& region, int skip_z, std::size_t prefix_len, const BoundsConfig& cfg)
      : region_(&region), skip_z_(skip_z), prefix_len_(prefix_len) {
    for (std::size_t q = 0; q < region.Z.size(); ++q)
      space_.discrete.emplace_back(static_cast<int>(q) + 1 == skip_z ? 1 : region.Z.lo[q],
                                   static_cast<int>(q) + 1 == skip_z ? 1 : region.Z.hi[q]);
    use_list_ = region.C.cardinality() <= cfg.partition_enumeration_limit;
    if (use_list_) {
      partitions_ = partitions_of_box(region.C);
      space_.discrete.emplace_back(0, static_cast<int>(partitions_.size()) - 1);
    } else {
      for (std::size_t q = 0; q < region.C.size(); ++q) space_.discrete.emplace_back(region.C.lo[q], region.C.hi[q]);
    }
    for (std::size_t q = 0; q < prefix_len; ++q) space_.discrete.emplace_back(region.C_new.lo[q], region.C_new.hi[q]);
    const int K = static_cast<int>(region.gamma_lo.rows());
    for (int s = 0; s < K; ++s)
      for (int t = 0; t < K; ++t) space_.continuous.emplace_back(region.gamma_lo(s, t), region.gamma_hi(s, t));
  }

  const SearchSpace& space() const { return space_; }

  struct Decoded {
    std::vector<int> Z, S_old, prefix;
    Matrix gamma;
  };

  void decode(const SearchPoint& p, Decoded& out) const {
    const std::size_t n = region_->Z.size(), M = region_->C.size();
    out.Z.assign(p.labels.begin(), p.labels.begin() + n);
    std::size_t at = n;
    if (use_list_) {
      out.S_old = partitions_[p.labels[at++]];
    } else {
      out.S_old = sequential_rule(std::span<const int>(p.labels.data() + at, M));
      at += M;
    }
    out.prefix.assign(p.labels.begin() + at, p.labels.begin() + at + prefix_len_);
    const int K = static_cast<int>(region_->gamma_lo.rows());
    out.gamma.resize(K, K);
    for (int s = 0; s < K; ++s)
      for (int t = 0; t < K; ++t) out.gamma(s, t) = p.values[s * K + t];
  }

  // Starts with the old partition at its fewest and most clusters.
  std::pair<SearchPoint, SearchPoint> cluster_extreme_starts() const {
    SearchPoint lo, hi;
    for (auto [a, b] : space_.discrete) {
      lo.labels.push_back(a + (b - a) / 2);
      hi.labels.push_back(a + (b - a) / 2);
    }
    for (auto [a, b] : space_.continuous) {
      lo.values.push_back(0.5 * (a + b));
      hi.values.push_back(0.5 * (a + b));
    }
    const std::size_t n = region_->Z.size();
    if (use_list_) {
      std::size_t kmin = 0, kmax = 0;
      for (std::size_t q = 0; q < partitions_.size(); ++q) {
        if (count_distinct(partitions_[q]) < count_distinct(partitions_[kmin])) kmin = q;
        if (count_distinct(partitions_[q]) > count_distinct(partitions_[kmax])) kmax = q;
      }
      lo.labels[n] = static_cast<int>(kmin);
      hi.labels[n] = static_cast<int>(kmax);
    } else {
      for (std::size_t q = 0; q < region_->C.size(); ++q) {
        lo.labels[n + q] = region_->C.lo[q];
        hi.labels[n + q] = region_->C.hi[q];
      }
    }
    return {lo, hi};
  }

  SearchPoint random_point(Substream& s) const {
    SearchPoint p;
    for (auto [a, b] : space_.discrete) p.labels.push_back(a + static_cast<int>(s() % static_cast<std::uint64_t>(b - a + 1)));
    for (auto [a, b] : space_.continuous) p.values.push_back(a + (b - a) * s.uniform());
    return p;
  }

 private:
  const FeasibleRegion* region_;
  int skip_z_;
  std::size_t prefix_len_;
  bool use_list_ = true;
  std::vector<std::vector<int>> partitions_;
  SearchSpace space_;
};

// F vector at a search point; false when the point is not a valid state.
using CdfAt = std::function<bool(const SearchPoint&, const MarginalModel&, std::vector<double>&)>;

inline BoundResult optimize_bounds(const RegionCoder& coder, int m, const CdfAt& cdf_at, const MarginalModel& model,
                                   const BoundsConfig& cfg, std::uint64_t stream_key,
                                   std::span<const SearchPoint> extra_starts) {
  BoundResult res;
  res.pair.FL.assign(m, std::numeric_limits<double>::infinity());
  res.pair.FU.assign(m, -std::numeric_limits<double>::infinity());
  const auto& space = coder.space();
  const int threads = std::max(cfg.threads, 1);
  // Separate models per worker keep the caches thread-local.
  std::vector<std::unique_ptr<MarginalModel>> models;
  auto model_for = [&](std::size_t w) -> const MarginalModel& {
    return w == 0 ? model : *models[w - 1];
  };
  for (int w = 1; w < threads; ++w) models.push_back(std::make_unique<MarginalModel>(model.panel(), model.prior()));

  auto absorb = [](BoundPair& pair, const std::vector<double>& F) {
    for (std::size_t v = 0; v < F.size(); ++v) {
      pair.FL[v] = std::min(pair.FL[v], F[v]);
      pair.FU[v] = std::max(pair.FU[v], F[v]);
    }
  };

  if (space.continuous_pinned() && space.discrete_cardinality() <= static_cast<double>(cfg.anneal.exhaustive_limit)) {
    res.exhaustive = true;
    std::vector<SearchPoint> points;
    enumerate_space(space, [&](const SearchPoint& p) { points.push_back(p); });
    std::vector<BoundPair> partial(threads, BoundPair{res.pair.FL, res.pair.FU});
    std::vector<std::size_t> valid(threads, 0);
    std::vector<std::vector<double>> scratch(threads);
    parallel_for(points.size(), threads, [&](std::size_t k, std::size_t w) {
      if (!cdf_at(points[k], model_for(w), scratch[w])) return;
      ++valid[w];
      absorb(partial[w], scratch[w]);
    });
    for (int w = 0; w < threads; ++w) {
      res.configurations += valid[w];
      for (int v = 0; v < m; ++v) {
        res.pair.FL[v] = std::min(res.pair.FL[v], partial[w].FL[v]);
        res.pair.FU[v] = std::max(res.pair.FU[v], partial[w].FU[v]);
      }
    }
    if (res.configurations == 0) throw ConfigurationError("no valid configuration in the feasible region");
    monotonize(res.pair);
    return res;
  }

  // One optimization per (v, sense), each with its own stream.
  std::vector<double> best(2 * (m - 1));
  parallel_for(best.size(), threads, [&](std::size_t task, std::size_t w) {
    const int v = static_cast<int>(task / 2);
    const Sense sense = task % 2 ? Sense::maximize : Sense::minimize;
    Substream s(splitmix64(stream_key ^ splitmix64(task + 1)));
    std::vector<double> F;
    auto obj = [&](const SearchPoint& p) {
      return cdf_at(p, model_for(w), F) ? F[v] : std::numeric_limits<double>::quiet_NaN();
    };
    best[task] = anneal_optimize(obj, space, sense, cfg.anneal, s, extra_starts).value;
  });
  for (int v = 0; v + 1 < m; ++v) {
    res.pair.FL[v] = best[2 * v];
    res.pair.FU[v] = best[2 * v + 1];
  }
  res.pair.FL[m - 1] = res.pair.FU[m - 1] = 1.0;

  // Random feasible probes widen the bounds wherever the optimizer fell short.
  Substream probe(splitmix64(stream_key ^ 0xA5A5A5A5ULL));
  std::vector<double> F;
  for (int r = 0; r < cfg.anneal.probes; ++r) {
    const auto p = coder.random_point(probe);
    if (!cdf_at(p, model, F)) continue;
    bool widened = false;
    for (int v = 0; v < m; ++v)
      if (F[v] < res.pair.FL[v] || F[v] > res.pair.FU[v]) widened = true;
    if (widened) {
      ++res.repairs;
      absorb(res.pair, F);
    }
  }
  monotonize(res.pair);
  return res;
}

}  // namespace bounds_detail

inline void check_region(const FeasibleRegion& r, const PriorConfig& prior, int n) {
  const int M = prior.M;
  if (static_cast<int>(r.Z.size()) != n || static_cast<int>(r.C.size()) != M)
    throw ConfigurationError("feasible region has the wrong shape");
  for (std::size_t q = 0; q < r.Z.size(); ++q)
    if (r.Z.lo[q] < 1 || r.Z.hi[q] > M || r.Z.lo[q] > r.Z.hi[q]) throw ConfigurationError("invalid allocation box");
  for (std::size_t q = 0; q < r.C.size(); ++q)
    if (r.C.lo[q] < 1 || r.C.hi[q] > M || r.C.lo[q] > r.C.hi[q]) throw ConfigurationError("invalid label box");
}

// Bounds on the conditional CDF of z_i (1-based) over slots 1..M.
inline BoundResult bound_z_cdf(int i, const FeasibleRegion& region, const MarginalModel& model,
                               const BoundsConfig& cfg, std::uint64_t stream_key) {
  check_region(region, model.prior(), model.panel().n());
  const int M = model.prior().M;
  const bounds_detail::RegionCoder coder(region, i, 0, cfg);
  const std::vector<Matrix>* phi = region.phi ? &*region.phi : nullptr;
  auto cdf_at = [&](const SearchPoint& p, const MarginalModel& mdl, std::vector<double>& F) {
    thread_local bounds_detail::RegionCoder::Decoded d;
    coder.decode(p, d);
    z_conditional_cdf(i, d.Z, d.S_old, d.gamma, mdl, phi, F);
    return true;
  };
  return bounds_detail::optimize_bounds(coder, M, cdf_at, model, cfg, stream_key, {});
}

// Bounds on the conditional CDF of c_j over labels 1..M.
inline BoundResult bound_c_cdf(int j, const FeasibleRegion& region, const MarginalModel& model,
                               const BoundsConfig& cfg, std::uint64_t stream_key) {
  check_region(region, model.prior(), model.panel().n());
  if (static_cast<int>(region.C_new.size()) < j - 1) throw ConfigurationError("label prefix box too short");
  const int M = model.prior().M;
  const bounds_detail::RegionCoder coder(region, 0, static_cast<std::size_t>(j - 1), cfg);
  const std::vector<Matrix>* phi = region.phi ? &*region.phi : nullptr;
  auto cdf_at = [&](const SearchPoint& p, const MarginalModel& mdl, std::vector<double>& F) {
    thread_local bounds_detail::RegionCoder::Decoded d;
    coder.decode(p, d);
    return c_conditional_cdf(j, d.Z, d.S_old, d.prefix, d.gamma, mdl, phi, F) >= 0;
  };
  auto [few, many] = coder.cluster_extreme_starts();
  const SearchPoint starts[2] = {few, many};
  auto res = bounds_detail::optimize_bounds(coder, M, cdf_at, model, cfg, stream_key, starts);
  // k_j at the two manual settings of the old partition.
  for (int side = 0; side < 2; ++side) {
    bounds_detail::RegionCoder::Decoded d;
    coder.decode(starts[side], d);
    const auto P = sweep_partition(d.S_old, d.prefix);
    const int k = P ? clusters_without(j, *P).k : -1;
    (side == 0 ? res.k_sup : res.k_inf) = k;
  }
  return res;
}

// s_j is a point mass at rule(C)_j; rule is monotone, so its extremes over
// the label box sit at the box corners.
inline BoundPair bound_s_cdf(int j, const IntBox& C) {
  const int M = static_cast<int>(C.size());
  const int s_min = sequential_rule(C.lo)[j - 1], s_max = sequential_rule(C.hi)[j - 1];
  BoundPair p;
  for (int v = 1; v <= M; ++v) {
    p.FL.push_back(v >= s_max ? 1.0 : 0.0);
    p.FU.push_back(v >= s_min ? 1.0 : 0.0);
  }
  return p;
}

}  // namespace pmix
