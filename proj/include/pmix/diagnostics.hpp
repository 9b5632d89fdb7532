#pragma once

// Property scans behind `pmix diagnose` and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pmix/bounds.hpp"
#include "pmix/phi_gamma.hpp"

namespace pmix {

struct ScanReport {
  std::size_t configurations = 0, points = 0, violations = 0;
  double worst = -std::numeric_limits<double>::infinity();  // largest second difference seen
};

struct ScanConfig {
  int configurations = 100;
  int grid = 200;
  double tolerance = 1e-8;
};

namespace diag_detail {

inline void second_differences(const std::function<double(double)>& f, double lo, double hi, const ScanConfig& cfg,
                               ScanReport& r) {
  const double h = (hi - lo) / (cfg.grid + 1);
  for (int g = 1; g <= cfg.grid - 1; ++g) {
    const double x = lo + h * (g + 0.5);
    const double d2 = f(x - h) - 2.0 * f(x) + f(x + h);
    ++r.points;
    r.worst = std::max(r.worst, d2);
    if (d2 > cfg.tolerance) ++r.violations;
  }
}

// Random panel, allocation, partition, parameters and prior on K states.
struct RandomSetting {
  CategoricalPanel panel;
  PriorConfig prior;
  ChainState state;
};

inline RandomSetting random_setting(Substream& s) {
  auto unif = [&](double a, double b) { return a + (b - a) * s.uniform(); };
  auto pick = [&](int a, int b) { return a + static_cast<int>(s() % static_cast<std::uint64_t>(b - a + 1)); };
  const int K = pick(2, 3), n = pick(2, 5), M = pick(1, 4);
  std::vector<std::vector<int>> series(n);
  for (auto& y : series) {
    y.resize(pick(2, 15));
    for (int& v : y) v = pick(1, K);
  }
  RandomSetting r{CategoricalPanel(series, K), PriorConfig::defaults(K, M), {}};
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      r.prior.a(i, j) = unif(1.01, 5.0);
      r.prior.b(i, j) = unif(0.1, 3.0);
    }
  r.prior.gamma_lo.setConstant(0.2);
  r.prior.gamma_hi.setConstant(10.0);
  auto& st = r.state;
  for (int i = 0; i < n; ++i) st.Z.push_back(pick(1, M));
  std::vector<int> C(M);
  for (int& c : C) c = pick(1, M);
  st.C = C;
  st.S = sequential_rule(C);
  st.k = count_distinct(st.S);
  st.gamma.resize(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) st.gamma(i, j) = unif(0.2, 6.0);
  for (int l = 0; l < st.k; ++l) {
    Matrix phi(K, K);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) phi(i, j) = unif(0.05, 1.0);
      phi.row(i) /= phi.row(i).sum();
    }
    st.Phi.push_back(phi);
  }
  return r;
}

}  // namespace diag_detail

// Beta marginal of one transition probability over random settings where
// both Beta parameters exceed one.
inline ScanReport scan_phi_marginal(Substream& s, const ScanConfig& cfg = {}) {
  ScanReport r;
  while (static_cast<int>(r.configurations) < cfg.configurations) {
    auto set = diag_detail::random_setting(s);
    const int K = set.panel.K;
    const int ell = 1 + static_cast<int>(s() % static_cast<std::uint64_t>(set.state.k));
    const int row = 1 + static_cast<int>(s() % K), col = 1 + static_cast<int>(s() % K);
    const auto p = phi_marginal_beta(ell, row, col, set.state, set.panel);
    if (!(p.a > 1.0 && p.b > 1.0)) continue;
    ++r.configurations;
    diag_detail::second_differences(
        [&](double x) { return log_fc_phi_elem(x, ell, row, col, set.state, set.panel, PhiVariant::marginal); }, 0.0, 1.0,
        cfg, r);
  }
  return r;
}

// Full conditional of gamma_st (Phi present) over random settings with
// a_st > 1.
inline ScanReport scan_gamma_conditional(Substream& s, const ScanConfig& cfg = {}) {
  ScanReport r;
  while (static_cast<int>(r.configurations) < cfg.configurations) {
    auto set = diag_detail::random_setting(s);
    const int K = set.panel.K;
    const int row = 1 + static_cast<int>(s() % K), col = 1 + static_cast<int>(s() % K);
    ++r.configurations;
    const double lo = set.prior.gamma_lo(row - 1, col - 1), hi = set.prior.gamma_hi(row - 1, col - 1);
    diag_detail::second_differences([&](double x) { return log_fc_gamma(x, row, col, set.state, set.prior); }, lo, hi,
                                    cfg, r);
  }
  return r;
}

struct GammaWitness {
  bool found = false;
  double x = 0.0, a = 0.0;
  int y = 0, b = 0;
  double d2 = 0.0;          // analytic second derivative of log h
  double d2_numeric = 0.0;  // central second difference of the log-Gamma form
};

// Searches one factor of the gamma conditional with Phi integrated out for
// a point of positive curvature. Returns the largest curvature found.
inline GammaWitness search_gamma_marginal_witness() {
  GammaWitness w;
  for (double a : {0.5, 1.0, 2.0, 5.0})
    for (int y = 0; y <= 12; ++y)
      for (int b = 1; b <= 12; ++b)
        for (int g = 1; g <= 60; ++g) {
          const double x = 0.05 * std::pow(1.1, g);
          const auto d = gamma_marginal_diag(x, a, y, b);
          if (d.d2_log_h > w.d2) {
            w = {true, x, a, y, b, d.d2_log_h, 0.0};
          }
        }
  if (w.found) {
    const double h = 1e-4 * w.x;
    auto f = [&](double x) { return gamma_marginal_diag(x, w.a, w.y, w.b).log_h_ratio; };
    w.d2_numeric = (f(w.x - h) - 2.0 * f(w.x) + f(w.x + h)) / (h * h);
  }
  return w;
}

// ---- bound property suite -------------------------------------------------

struct BoundSuiteReport {
  std::size_t configurations = 0, property_failures = 0, probes = 0, probe_violations = 0, internal_repairs = 0;
  double repair_rate() const { return probes ? static_cast<double>(probe_violations) / probes : 0.0; }
};

// Random partially coalesced regions: each coordinate pinned with
// probability 1/2, otherwise a random interval. Fresh probes that fall
// outside a bound widen it and count as repairs.
inline BoundSuiteReport bound_property_suite(const CategoricalPanel& panel, const PriorConfig& prior,
                                             const BoundsConfig& cfg, int configurations, int probes_per,
                                             std::uint64_t seed) {
  const MarginalModel model(panel, prior);
  const int n = panel.n(), M = prior.M, K = panel.K;
  Substream s(seed);
  auto pick = [&](int a, int b) { return a + static_cast<int>(s() % static_cast<std::uint64_t>(b - a + 1)); };
  auto box = [&](int len) {
    IntBox b;
    for (int q = 0; q < len; ++q) {
      int x = pick(1, M), y = s() % 2 ? x : pick(1, M);
      b.lo.push_back(std::min(x, y));
      b.hi.push_back(std::max(x, y));
    }
    return b;
  };
  auto in = [&](const IntBox& b) {
    std::vector<int> v;
    for (std::size_t q = 0; q < b.size(); ++q) v.push_back(pick(b.lo[q], b.hi[q]));
    return v;
  };
  BoundSuiteReport rep;
  std::vector<double> F;
  // Draws until the requested number of usable configurations and probes,
  // giving up after a generous number of attempts.
  const int max_attempts = 50 * std::max(configurations, 1);
  for (int c = 0; static_cast<int>(rep.configurations) < configurations && c < max_attempts; ++c) {
    FeasibleRegion r;
    r.Z = box(n);
    r.C = box(M);
    r.C_new = box(M);
    r.C_new.lo[0] = 1;
    r.gamma_lo = prior.gamma_lo;
    r.gamma_hi = prior.gamma_hi;
    const bool is_z = c % 2 == 0;
    const int coord = is_z ? 1 + c / 2 % n : 1 + c / 2 % M;
    BoundResult res;
    try {
      res = is_z ? bound_z_cdf(coord, r, model, cfg, splitmix64(seed + c))
                 : bound_c_cdf(coord, r, model, cfg, splitmix64(seed + c));
    } catch (const ConfigurationError&) {
      continue;  // the label box holds no valid prefix; draw another
    }
    ++rep.configurations;
    rep.internal_repairs += res.repairs;
    if (!check_bound_properties(res.pair).ok()) ++rep.property_failures;
    int taken = 0;
    for (int p = 0; taken < probes_per && p < 50 * probes_per; ++p) {
      const auto Z = in(r.Z);
      const auto S = sequential_rule(in(r.C));
      Matrix g(K, K);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) g(a, b) = r.gamma_lo(a, b) + (r.gamma_hi(a, b) - r.gamma_lo(a, b)) * s.uniform();
      if (is_z) {
        z_conditional_cdf(coord, Z, S, g, model, nullptr, F);
      } else {
        const auto prefix = in(r.C_new);
        if (c_conditional_cdf(coord, Z, S, std::span<const int>(prefix.data(), coord - 1), g, model, nullptr, F) < 0)
          continue;
      }
      ++rep.probes;
      ++taken;
      bool bad = false;
      for (int v = 0; v < M; ++v) {
        if (F[v] < res.pair.FL[v]) bad = true, res.pair.FL[v] = F[v];
        if (F[v] > res.pair.FU[v]) bad = true, res.pair.FU[v] = F[v];
      }
      rep.probe_violations += bad;
    }
    if (!check_bound_properties(res.pair).ok()) ++rep.property_failures;
  }
  return rep;
}

// ---- envelope report ------------------------------------------------------

struct EnvelopeReport {
  double epsilon = 0.0, eta = 0.0;
  std::vector<std::string> names;
  std::vector<double> coordinate_epsilon, coordinate_eta;
};

inline EnvelopeReport envelope_report(std::span<const int> Z, std::span<const int> S, const PriorConfig& prior,
                                      const CategoricalPanel& panel, const KernelConfig& cfg, std::uint64_t seed) {
  const auto pg = build_phi_gamma_system(Z, S, prior, panel);
  KernelConfig c = cfg;
  c.build_upper = true;
  Substream opt(seed);
  const auto k = build_kernel(pg.system, c, opt);
  EnvelopeReport r{k.epsilon(), k.eta(), {}, {}, {}};
  for (std::size_t i = 0; i < pg.system.dim(); ++i) {
    r.names.push_back(pg.system.coords[i].name);
    r.coordinate_epsilon.push_back(k.coordinate_epsilon(i));
    r.coordinate_eta.push_back(k.coordinate_eta(i));
  }
  return r;
}

}  // namespace pmix
