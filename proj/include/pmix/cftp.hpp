#pragma once

// Coupling from the past with bounding chains on (Z, C), followed by a
// perfect (Phi, gamma) draw at the coalescence time and a forward pass to 0.
//
// One time step t of the chain, shared by the bounding and single chains:
//   z_i, i = 1..n   Phi integrated out, gamma = gamma(t-1), uniform (Z, t, i)
//   c_j, j = 1..M   labels relative to the partition being swept,
//                   uniform (C, t, j)
//   S = rule(C)
//   (Phi, gamma)    perfect draw given (Z, S), keyed to t
// S depends on C alone, so coalescence of C implies coalescence of S.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pmix/bounds.hpp"
#include "pmix/phi_gamma.hpp"

namespace pmix {

// ---- relabelling ----------------------------------------------------------

namespace cftp_detail {

// Integer ids of matrices by exact equality, in order of first appearance.
inline std::vector<int> matrix_ids(std::span<const Matrix> Theta) {
  std::vector<int> ids(Theta.size());
  std::vector<std::size_t> reps;
  for (std::size_t j = 0; j < Theta.size(); ++j) {
    int found = 0;
    for (std::size_t r = 0; r < reps.size(); ++r)
      if (Theta[reps[r]] == Theta[j]) found = static_cast<int>(r) + 1;
    if (!found) {
      reps.push_back(j);
      found = static_cast<int>(reps.size());
    }
    ids[j] = found;
  }
  return ids;
}

}  // namespace cftp_detail

// Deterministic stand-in parameter for component h: uniform rows with a
// small diagonal perturbation so that different h give different matrices.
inline Matrix arbitrary_theta(int K, int h) {
  Matrix m = Matrix::Constant(K, K, 1.0 / K);
  if (K < 2) return m;
  for (int s = 0; s < K; ++s) {
    m(s, s) += h * 1e-6;
    m(s, (s + 1) % K) -= h * 1e-6;
  }
  return m;
}

// S from raw labels C and the matrices they carry.
inline std::vector<int> relabel(std::span<const int> C, std::span<const Matrix> Theta) {
  if (C.size() != Theta.size()) throw InputError("C and Theta differ in length");
  const auto ids = cftp_detail::matrix_ids(Theta);
  for (std::size_t j = 0; j < C.size(); ++j)
    for (std::size_t q = 0; q < j; ++q)
      if ((C[j] == C[q]) != (ids[j] == ids[q]))
        throw InputError("slots " + std::to_string(q + 1) + " and " + std::to_string(j + 1) +
                         " have labels inconsistent with their parameters");
  return first_appearance(ids);
}

struct SweepRelabel {
  std::vector<Matrix> Theta;
  std::vector<int> S;
};

// Applies sweep labels C (relative to the partition at the time each slot
// was updated) to an arbitrary starting Theta. New components receive fresh
// stand-in matrices. Whether a label is valid depends on the starting
// partition, but whenever it is, the resulting S is rule(C).
inline SweepRelabel sweep_relabel(std::span<const int> C, std::span<const Matrix> Theta) {
  if (C.size() != Theta.size()) throw InputError("C and Theta differ in length");
  const int K = Theta.empty() ? 1 : static_cast<int>(Theta[0].rows());
  std::vector<int> ids = cftp_detail::matrix_ids(Theta);
  std::vector<Matrix> by_id;
  for (std::size_t j = 0; j < Theta.size(); ++j)
    if (ids[j] > static_cast<int>(by_id.size())) by_id.push_back(Theta[j]);
  int fresh_h = 1;
  for (std::size_t j = 0; j < C.size(); ++j) {
    const int before = *std::max_element(ids.begin(), ids.end());
    if (!apply_label(ids, static_cast<int>(j) + 1, C[j]))
      throw InputError("label " + std::to_string(C[j]) + " at slot " + std::to_string(j + 1) + " exceeds k + 1");
    if (ids[j] > before) {
      Matrix m;
      do m = arbitrary_theta(K, fresh_h++);
      while (std::find(by_id.begin(), by_id.end(), m) != by_id.end() && K > 1);
      by_id.push_back(m);
    }
  }
  SweepRelabel out;
  for (int id : ids) out.Theta.push_back(by_id[id - 1]);
  out.S = first_appearance(ids);
  return out;
}

// ---- epochs ---------------------------------------------------------------

// Epoch j restarts the bounding chains at time -2^j and runs steps
// -2^j + 1, ..., 0. The steps it adds over epoch j - 1 form its window.
struct EpochPlan {
  int j = 1;

  std::int64_t start() const { return -(std::int64_t{1} << j); }
  std::int64_t window_first() const { return start() + 1; }
  std::int64_t window_last() const { return j == 1 ? 0 : -(std::int64_t{1} << (j - 1)); }
};

// ---- single chain ---------------------------------------------------------

// One collapsed sweep over Z then C at time t.
inline void collapsed_sweep(std::vector<int>& Z, std::vector<int>& C, const Matrix& gamma, const MarginalModel& model,
                            const RandomLedger& ledger, std::int64_t t) {
  const int n = static_cast<int>(Z.size()), M = static_cast<int>(C.size());
  const auto S_old = sequential_rule(C);
  std::vector<double> F;
  for (int i = 1; i <= n; ++i) {
    z_conditional_cdf(i, Z, S_old, gamma, model, nullptr, F);
    Z[i - 1] = invert_cdf(F, ledger.uniform(Stream::Z, t, {i}));
  }
  std::vector<int> fresh(M);
  for (int j = 1; j <= M; ++j) {
    if (c_conditional_cdf(j, Z, S_old, std::span<const int>(fresh.data(), j - 1), gamma, model, nullptr, F) < 0)
      throw KernelInconsistency("single chain produced an invalid label prefix");
    fresh[j - 1] = invert_cdf(F, ledger.uniform(Stream::C, t, {j}));
  }
  C = std::move(fresh);
}

// ---- bounding chain -------------------------------------------------------

struct BoundingState {
  IntBox Z, C;

  static BoundingState full(int n, int M) {
    return {IntBox(std::vector<int>(n, 1), std::vector<int>(n, M)), IntBox(std::vector<int>(M, 1), std::vector<int>(M, M))};
  }

  bool coalesced() const {
    for (std::size_t q = 0; q < Z.size(); ++q)
      if (!Z.pinned(q)) return false;
    for (std::size_t q = 0; q < C.size(); ++q)
      if (!C.pinned(q)) return false;
    return true;
  }

  std::string gap_report() const {
    std::ostringstream os;
    for (std::size_t q = 0; q < Z.size(); ++q)
      if (!Z.pinned(q)) os << " z" << q + 1 << "=[" << Z.lo[q] << "," << Z.hi[q] << "]";
    for (std::size_t q = 0; q < C.size(); ++q)
      if (!C.pinned(q)) os << " c" << q + 1 << "=[" << C.lo[q] << "," << C.hi[q] << "]";
    return os.str();
  }
};

struct BoundingStats {
  std::size_t evaluations = 0, repairs = 0, exhaustive = 0;
};

inline std::uint64_t bound_stream_key(const RandomLedger& ledger, std::int64_t t, int kind, int coord) {
  return ledger.substream(Stream::anneal, t, {kind, coord}).key();
}

// Advances the bounding boxes through step t using the same uniforms and
// inversion as collapsed_sweep, so every single chain started inside the
// boxes stays inside them.
inline void bounding_step(BoundingState& b, std::int64_t t, const MarginalModel& model, const RandomLedger& ledger,
                          const BoundsConfig& cfg, BoundingStats* stats = nullptr) {
  const auto& prior = model.prior();
  const int n = static_cast<int>(b.Z.size()), M = static_cast<int>(b.C.size());
  FeasibleRegion r;
  r.gamma_lo = prior.gamma_lo;
  r.gamma_hi = prior.gamma_hi;
  r.C = b.C;
  auto note = [&](const BoundResult& res) {
    if (!stats) return;
    ++stats->evaluations;
    stats->repairs += res.repairs;
    stats->exhaustive += res.exhaustive;
  };
  for (int i = 1; i <= n; ++i) {
    r.Z = b.Z;  // slots q < i already hold their new bounds
    const auto res = bound_z_cdf(i, r, model, cfg, bound_stream_key(ledger, t, 1, i));
    note(res);
    const auto [lo, hi] = invert_bounds(res.pair, ledger.uniform(Stream::Z, t, {i}));
    b.Z.lo[i - 1] = lo;
    b.Z.hi[i - 1] = hi;
  }
  r.Z = b.Z;
  r.C_new = b.C;
  for (int j = 1; j <= M; ++j) {
    const auto res = bound_c_cdf(j, r, model, cfg, bound_stream_key(ledger, t, 2, j));
    note(res);
    const auto [lo, hi] = invert_bounds(res.pair, ledger.uniform(Stream::C, t, {j}));
    r.C_new.lo[j - 1] = lo;
    r.C_new.hi[j - 1] = hi;
  }
  b.C = r.C_new;
}

// ---- driver ---------------------------------------------------------------

struct CftpTrace {
  int epoch;
  std::int64_t t;
  const BoundingState* bounds;
};

struct CftpConfig {
  BoundsConfig bounds;
  KernelConfig kernel;
  int max_epochs = 20;
  std::function<void(const CftpTrace&)> observer;
};

struct CftpResult {
  ChainState state;
  std::int64_t coalescence_time = 0;
  int epochs = 0;
  double epsilon = 1.0;  // minorization constant of the last (Phi, gamma) kernel
  BoundingStats stats;
};

inline void check_cftp_inputs(const CategoricalPanel& panel, const PriorConfig& prior) {
  prior.validate();
  if (panel.n() < 1) throw InputError("panel has no series");
  if (panel.K != prior.K()) throw ConfigurationError("panel and prior disagree on K");
  if (panel.n() > 63) throw ConfigurationError("at most 63 series are supported");
  if (!prior.gamma_fixed()) {
    if (prior.phi_truncation <= 0.0) throw ConfigurationError("free gamma requires phi_truncation > 0");
    for (int s = 0; s < prior.K(); ++s)
      for (int t = 0; t < prior.K(); ++t)
        if (prior.gamma_hi(s, t) > prior.gamma_lo(s, t) && !(prior.a(s, t) > 1.0))
          throw ConfigurationError("gamma conditional needs a_st > 1 for every free entry");
    // A stick whose Beta parameters move with gamma must stay log-concave
    // for a cluster with no transitions out of s, so the lower ends alone
    // have to exceed one.
    const int K = prior.K();
    for (int s = 0; s < K; ++s)
      for (int t = 0; t + 1 < K; ++t) {
        bool depends = false;
        double tail = 0.0;
        for (int u = t; u < K; ++u) depends = depends || prior.gamma_hi(s, u) > prior.gamma_lo(s, u);
        for (int u = t + 1; u < K; ++u) tail += prior.gamma_lo(s, u);
        if (depends && !(prior.gamma_lo(s, t) > 1.0 && tail > 1.0))
          throw ConfigurationError("free gamma in row " + std::to_string(s + 1) +
                                   " needs gamma_lo > 1 there (stick conditionals of empty clusters must stay "
                                   "log-concave); raise gamma_lo or pin gamma");
      }
  }
}

inline CftpResult run_cftp(const CategoricalPanel& panel, const PriorConfig& prior, const RandomLedger& ledger,
                           const CftpConfig& cfg = {}) {
  check_cftp_inputs(panel, prior);
  const int n = panel.n(), M = prior.M;
  const MarginalModel model(panel, prior);
  CftpResult out;
  for (int j = 1; j <= cfg.max_epochs; ++j) {
    const EpochPlan plan{j};
    auto b = BoundingState::full(n, M);
    std::int64_t t_star = 1;
    for (std::int64_t t = plan.start() + 1; t <= 0; ++t) {
      bounding_step(b, t, model, ledger, cfg.bounds, &out.stats);
      if (cfg.observer) cfg.observer({j, t, &b});
      if (b.coalesced()) {
        t_star = t;
        break;
      }
    }
    if (t_star > 0) {
      if (j == cfg.max_epochs)
        throw NonCoalescence("no coalescence after " + std::to_string(j) + " epochs; open at time 0:" + b.gap_report());
      continue;
    }
    auto& st = out.state;
    st.Z = b.Z.lo;
    st.C = b.C.lo;
    // Every start from which C* is a valid label sequence yields rule(C*),
    // so no stand-in parameters are needed.
    st.S = sequential_rule(st.C);
    auto draw = perfect_phi_gamma(st.Z, st.S, prior, panel, ledger, t_star, cfg.kernel);
    for (std::int64_t t = t_star + 1; t <= 0; ++t) {
      collapsed_sweep(st.Z, st.C, draw.gamma, model, ledger, t);
      st.S = sequential_rule(st.C);
      draw = perfect_phi_gamma(st.Z, st.S, prior, panel, ledger, t, cfg.kernel);
    }
    st.Phi = std::move(draw.Phi);
    st.gamma = std::move(draw.gamma);
    st.k = count_distinct(st.S);
    out.coalescence_time = t_star;
    out.epochs = j;
    out.epsilon = draw.epsilon;
    return out;
  }
  throw NonCoalescence("epoch cap must be at least 1");
}

// ---- enumeration oracle ---------------------------------------------------

struct PosteriorTable {
  std::map<std::vector<int>, double> Z;
  std::map<std::pair<std::vector<int>, std::vector<int>>, double> ZS;
  std::vector<double> k;  // k[h - 1] = P(k = h)
};

// All canonical partitions of M slots.
inline std::vector<std::vector<int>> canonical_partitions(int M) {
  std::vector<std::vector<int>> out;
  std::vector<int> S(M, 1);
  std::function<void(int, int)> rec = [&](int j, int d) {
    if (j == M) {
      out.push_back(S);
      return;
    }
    for (int v = 1; v <= d + 1; ++v) {
      S[j] = v;
      rec(j + 1, std::max(d, v));
    }
  };
  if (M >= 1) rec(1, 1);
  return out;
}

// Exact posterior of (Z, S) for pinned gamma, with Phi integrated out.
inline PosteriorTable enumerate_posterior(const CategoricalPanel& panel, const PriorConfig& prior,
                                          double max_terms = 1e6) {
  prior.validate();
  if (!prior.gamma_fixed()) throw ConfigurationError("enumeration needs pinned gamma");
  const int n = panel.n(), M = prior.M;
  const auto parts = canonical_partitions(M);
  if (std::pow(static_cast<double>(M), n) * static_cast<double>(parts.size()) > max_terms)
    throw OracleSizeError("enumeration would exceed " + std::to_string(static_cast<long long>(max_terms)) + " terms");
  const Matrix& gamma = prior.gamma_lo;
  double log_rising = 0.0;
  for (int q = 0; q < M; ++q) log_rising += std::log(prior.alpha + q);
  std::vector<std::pair<std::pair<std::vector<int>, std::vector<int>>, double>> terms;
  std::vector<int> Z(n, 1);
  for (const auto& S : parts) {
    const int k = count_distinct(S);
    std::vector<int> sizes(k, 0);
    for (int s : S) ++sizes[s - 1];
    double log_prior = k * std::log(prior.alpha) - log_rising - n * std::log(static_cast<double>(M));
    for (int sz : sizes) log_prior += std::lgamma(static_cast<double>(sz));
    std::fill(Z.begin(), Z.end(), 1);
    while (true) {
      double lw = log_prior;
      for (int l = 1; l <= k; ++l)
        lw += log_cluster_marginal(cluster_counts(l, Z, S, panel), gamma, prior.phi_truncation);
      terms.push_back({{Z, S}, lw});
      int q = 0;
      while (q < n && Z[q] == M) Z[q++] = 1;
      if (q == n) break;
      ++Z[q];
    }
  }
  double m = -std::numeric_limits<double>::infinity(), total = 0.0;
  for (const auto& [key, lw] : terms) m = std::max(m, lw);
  for (const auto& [key, lw] : terms) total += std::exp(lw - m);
  PosteriorTable out;
  out.k.assign(M, 0.0);
  for (const auto& [key, lw] : terms) {
    const double p = std::exp(lw - m) / total;
    out.ZS[key] += p;
    out.Z[key.first] += p;
    out.k[count_distinct(key.second) - 1] += p;
  }
  return out;
}

}  // namespace pmix
