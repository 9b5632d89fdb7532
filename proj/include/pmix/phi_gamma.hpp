#pragma once

// The (Phi, gamma) block given (Z, S) as a log-concave system. Each row of
// each cluster's transition matrix is written in stick-breaking coordinates
// v_t = phi_t / (1 - phi_1 - ... - phi_{t-1}), which turns the simplex into
// a product of intervals; given gamma the sticks are independent truncated
// Betas. Free gamma entries follow the Gamma-prior conditional.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "pmix/conditionals.hpp"
#include "pmix/model.hpp"
#include "pmix/perfect_lc.hpp"

namespace pmix {

struct PhiGammaLayout {
  int k = 0, K = 0;
  std::vector<std::pair<int, int>> free_gamma;  // 0-based (s, t)

  std::size_t sticks() const { return static_cast<std::size_t>(k) * K * (K - 1); }
  std::size_t v_index(int ell, int s, int t) const { return (static_cast<std::size_t>(ell) * K + s) * (K - 1) + t; }
  std::size_t gamma_index(std::size_t f) const { return sticks() + f; }
  std::size_t dim() const { return sticks() + free_gamma.size(); }
};

struct PhiGammaSystem {
  LogConcaveSystem system;
  PhiGammaLayout layout;
  std::vector<CountMatrix> counts;  // per cluster
  Matrix gamma_base;                // pinned values; free entries overwritten from the state

  Matrix gamma_of(std::span<const double> xi) const {
    Matrix g = gamma_base;
    for (std::size_t f = 0; f < layout.free_gamma.size(); ++f) {
      auto [s, t] = layout.free_gamma[f];
      g(s, t) = xi[layout.gamma_index(f)];
    }
    return g;
  }

  std::vector<Matrix> phi_of(std::span<const double> xi) const {
    const int K = layout.K;
    std::vector<Matrix> out;
    std::vector<double> v(K - 1), row(K);
    for (int ell = 0; ell < layout.k; ++ell) {
      Matrix phi(K, K);
      for (int s = 0; s < K; ++s) {
        for (int t = 0; t + 1 < K; ++t) v[t] = xi[layout.v_index(ell, s, t)];
        row_from_sticks(v, row);
        for (int t = 0; t < K; ++t) phi(s, t) = row[t];
      }
      out.push_back(std::move(phi));
    }
    return out;
  }

  std::vector<double> state_of(const std::vector<Matrix>& Phi, const Matrix& gamma) const {
    std::vector<double> xi(layout.dim());
    std::vector<double> row(layout.K);
    for (int ell = 0; ell < layout.k; ++ell)
      for (int s = 0; s < layout.K; ++s) {
        for (int t = 0; t < layout.K; ++t) row[t] = Phi[ell](s, t);
        const auto v = sticks_from_row(row);
        for (int t = 0; t + 1 < layout.K; ++t) xi[layout.v_index(ell, s, t)] = v[t];
      }
    for (std::size_t f = 0; f < layout.free_gamma.size(); ++f) {
      auto [s, t] = layout.free_gamma[f];
      xi[layout.gamma_index(f)] = gamma(s, t);
    }
    return xi;
  }
};

namespace pg_detail {

// Normalized truncated Beta(a, B) log density on [delta, 1 - delta].
inline double stick_log_density(double x, double a, double B, double delta) {
  if (x <= 0.0 || x >= 1.0) return (x <= 0.0 ? a : B) > 1.0 ? neg_inf : 0.0;
  return (a - 1.0) * std::log(x) + (B - 1.0) * std::log1p(-x) - log_beta(a, B) - log_beta_mass(a, B, delta);
}

inline double stick_dlog(double x, double a, double B) { return (a - 1.0) / x - (B - 1.0) / (1.0 - x); }

inline double truncated_beta_draw(double a, double B, double delta, double u) {
  if (delta <= 0.0) return boost::math::ibeta_inv(a, B, u);
  const double flo = boost::math::ibeta(a, B, delta), fhi = boost::math::ibeta(a, B, 1.0 - delta);
  return std::clamp(boost::math::ibeta_inv(a, B, flo + u * (fhi - flo)), delta, 1.0 - delta);
}

// Maximizes a unimodal function on [lo, hi].
template <class F>
double golden_max(F&& f, double lo, double hi, int iters = 60) {
  if (!(hi > lo)) return f(lo);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi, c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < iters && b - a > 1e-12 * std::max(1.0, std::abs(a)); ++it) {
    if (fc < fd) {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    } else {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    }
  }
  return std::max({fc, fd, f(lo), f(hi)});
}

struct GammaConditional {
  double k, a, b, lo, hi;

  double unnormalized(double x, double S, double A) const {
    return (x - 1.0) * S + k * (std::lgamma(x + A) - std::lgamma(x)) + (a - 1.0) * std::log(x) - b * x;
  }
  double dlog(double x, double S, double A) const {
    return S + k * (digamma(x + A) - digamma(x)) + (a - 1.0) / x - b;
  }
  double log_normalizer(double S, double A) const {
    if (hi <= lo) return 0.0;
    double m = neg_inf;
    for (int j = 0; j <= 64; ++j) m = std::max(m, unnormalized(lo + (hi - lo) * j / 64.0, S, A));
    auto f = [&](double y) { return std::exp(unnormalized(y, S, A) - m); };
    const double I = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 15, 1e-12);
    return m + std::log(I);
  }
};

}  // namespace pg_detail

inline PhiGammaSystem build_phi_gamma_system(std::span<const int> Z, std::span<const int> S, const PriorConfig& prior,
                                             const CategoricalPanel& panel) {
  if (static_cast<int>(Z.size()) != panel.n()) throw InputError("Z must hold one allocation per series");
  if (!is_canonical(S)) throw InputError("S must be a canonical partition");
  for (int z : Z)
    if (z < 1 || z > static_cast<int>(S.size())) throw InputError("allocation outside 1..M");
  PhiGammaSystem out;
  const int K = panel.K;
  auto& L = out.layout;
  L.K = K;
  L.k = count_distinct(S);
  const double delta = prior.phi_truncation;
  for (int ell = 1; ell <= L.k; ++ell) out.counts.push_back(cluster_counts(ell, Z, S, panel));
  out.gamma_base = prior.gamma_lo;
  for (int s = 0; s < K; ++s)
    for (int t = 0; t < K; ++t)
      if (prior.gamma_hi(s, t) > prior.gamma_lo(s, t)) L.free_gamma.emplace_back(s, t);
  if (!L.free_gamma.empty() && delta <= 0.0)
    throw ConfigurationError("free gamma requires phi_truncation > 0 for a positive minorizing mass");

  std::vector<int> free_at(K * K, -1);
  for (std::size_t f = 0; f < L.free_gamma.size(); ++f)
    free_at[L.free_gamma[f].first * K + L.free_gamma[f].second] = static_cast<int>(f);

  // Shared view so closures survive copies of the system.
  auto layout = std::make_shared<PhiGammaLayout>(L);
  auto base = std::make_shared<Matrix>(out.gamma_base);
  auto gamma_at = [layout, base, free_at, K](std::span<const double> xi, int s, int t) {
    const int f = free_at[s * K + t];
    return f < 0 ? (*base)(s, t) : xi[layout->gamma_index(f)];
  };

  // Stick coordinates.
  for (int ell = 0; ell < L.k; ++ell)
    for (int s = 0; s < K; ++s)
      for (int t = 0; t + 1 < K; ++t) {
        const CountMatrix& N = out.counts[ell];
        double tail_n = 0.0, b_lo = 0.0, b_hi = 0.0;
        bool depends = free_at[s * K + t] >= 0;
        for (int u = t + 1; u < K; ++u) {
          tail_n += N(s, u);
          b_lo += prior.gamma_lo(s, u);
          b_hi += prior.gamma_hi(s, u);
          depends = depends || free_at[s * K + u] >= 0;
        }
        const double a_lo = N(s, t) + prior.gamma_lo(s, t), a_hi = N(s, t) + prior.gamma_hi(s, t);
        b_lo += tail_n;
        b_hi += tail_n;
        auto params = [=](std::span<const double> xi) {
          double B = tail_n;
          for (int u = t + 1; u < K; ++u) B += gamma_at(xi, s, u);
          return std::pair<double, double>(N(s, t) + gamma_at(xi, s, t), B);
        };

        LogConcaveCoordinate c;
        c.name = "v[" + std::to_string(ell + 1) + "," + std::to_string(s + 1) + "," + std::to_string(t + 1) + "]";
        c.lo = delta;
        c.hi = 1.0 - delta;
        c.grid = delta > 0.0 ? AbscissaGrid::endpoints : AbscissaGrid::midpoints;
        c.stream = Stream::Theta;
        c.independent = !depends;
        c.log_density = [=](double x, std::span<const double> xi) {
          auto [a, B] = params(xi);
          return pg_detail::stick_log_density(x, a, B, delta);
        };
        c.dlog_density = [=](double x, std::span<const double> xi) {
          auto [a, B] = params(xi);
          return pg_detail::stick_dlog(x, a, B);
        };
        c.sampler = [=](std::span<const double> xi, Substream& st) {
          auto [a, B] = params(xi);
          return pg_detail::truncated_beta_draw(a, B, delta, st.uniform());
        };
        if (depends) {
          if (!(a_lo > 1.0 && b_lo > 1.0))
            throw ConfigurationError("log-concavity of " + c.name +
                                     " requires every count + gamma lower bound to exceed 1");
          // The normalized density is jointly concave in (a, B): the infimum
          // sits at a corner and the supremum is found by nested golden section.
          c.extremes = [=](double x) {
            ConditionalExtremes e{};
            e.log_inf = std::min({pg_detail::stick_log_density(x, a_lo, b_lo, delta),
                                  pg_detail::stick_log_density(x, a_lo, b_hi, delta),
                                  pg_detail::stick_log_density(x, a_hi, b_lo, delta),
                                  pg_detail::stick_log_density(x, a_hi, b_hi, delta)});
            e.log_sup = pg_detail::golden_max(
                [&](double a) {
                  return pg_detail::golden_max(
                      [&](double B) { return pg_detail::stick_log_density(x, a, B, delta); }, b_lo, b_hi);
                },
                a_lo, a_hi);
            e.dlog_inf = pg_detail::stick_dlog(x, a_lo, b_hi);
            e.dlog_sup = pg_detail::stick_dlog(x, a_hi, b_lo);
            return e;
          };
        }
        out.system.coords.push_back(std::move(c));
      }

  // Free gamma coordinates.
  for (std::size_t f = 0; f < L.free_gamma.size(); ++f) {
    auto [s, t] = L.free_gamma[f];
    if (!(prior.a(s, t) > 1.0))
      throw ConfigurationError("log-concavity of the gamma conditional requires a_st > 1 for every free entry");
    const pg_detail::GammaConditional gc{static_cast<double>(L.k), prior.a(s, t), prior.b(s, t), prior.gamma_lo(s, t),
                                         prior.gamma_hi(s, t)};
    // Sum over clusters of log phi_st, from the sticks.
    auto slog = [layout, s, t, K](std::span<const double> xi) {
      double acc = 0.0;
      for (int ell = 0; ell < layout->k; ++ell) {
        for (int u = 0; u < std::min(t, K - 1); ++u) acc += std::log1p(-xi[layout->v_index(ell, s, u)]);
        if (t < K - 1) acc += std::log(xi[layout->v_index(ell, s, t)]);
      }
      return acc;
    };
    auto others = [=](std::span<const double> xi) {
      double A = 0.0;
      for (int u = 0; u < K; ++u)
        if (u != t) A += gamma_at(xi, s, u);
      return A;
    };
    // Ranges of the sufficient statistics over the other coordinates' box.
    const double depth = std::min(t + 1, K - 1) * gc.k;
    const double s_min = depth * std::log(delta), s_max = depth * std::log1p(-delta);
    double A_min = 0.0, A_max = 0.0;
    for (int u = 0; u < K; ++u)
      if (u != t) {
        A_min += prior.gamma_lo(s, u);
        A_max += prior.gamma_hi(s, u);
      }

    LogConcaveCoordinate c;
    c.name = "gamma[" + std::to_string(s + 1) + "," + std::to_string(t + 1) + "]";
    c.lo = gc.lo;
    c.hi = gc.hi;
    c.stream = Stream::gamma;
    c.log_density = [=](double x, std::span<const double> xi) {
      const double S_ = slog(xi), A = others(xi);
      return gc.unnormalized(x, S_, A) - gc.log_normalizer(S_, A);
    };
    c.dlog_density = [=](double x, std::span<const double> xi) { return gc.dlog(x, slog(xi), others(xi)); };
    c.sampler = [=](std::span<const double> xi, Substream& st) {
      const double S_ = slog(xi), A = others(xi);
      AdaptiveRejectionSampler ars([&](double x) { return gc.unnormalized(x, S_, A); },
                                   [&](double x) { return gc.dlog(x, S_, A); }, gc.lo, gc.hi);
      return ars.sample(st);
    };
    // Concave in S, so S sits at an end of its range; A runs over a grid with
    // a Lipschitz margin k (psi(hi + A_min) - psi(lo + A_min)) * spacing / 2.
    struct Grid {
      std::vector<double> A, logZ_lo, logZ_hi;
      double margin = 0.0;
    };
    auto grid = std::make_shared<Grid>();
    const int nA = A_max > A_min ? 129 : 1;
    for (int j = 0; j < nA; ++j) {
      const double A = nA == 1 ? A_min : A_min + (A_max - A_min) * j / (nA - 1);
      grid->A.push_back(A);
      grid->logZ_lo.push_back(gc.log_normalizer(s_min, A));
      grid->logZ_hi.push_back(gc.log_normalizer(s_max, A));
    }
    if (nA > 1)
      grid->margin = gc.k * (digamma(gc.hi + A_min) - digamma(gc.lo + A_min)) * (A_max - A_min) / (nA - 1) / 2.0;
    c.extremes = [=](double x) {
      ConditionalExtremes e{};
      e.log_inf = std::numeric_limits<double>::infinity();
      e.log_sup = neg_inf;
      for (std::size_t j = 0; j < grid->A.size(); ++j) {
        const double A = grid->A[j];
        e.log_inf = std::min({e.log_inf, gc.unnormalized(x, s_min, A) - grid->logZ_lo[j],
                              gc.unnormalized(x, s_max, A) - grid->logZ_hi[j]});
      }
      e.log_inf -= grid->margin;
      for (double A : grid->A)
        e.log_sup = std::max(e.log_sup, pg_detail::golden_max(
                                            [&](double S_) {
                                              return gc.unnormalized(x, S_, A) - gc.log_normalizer(S_, A);
                                            },
                                            s_min, s_max, 40));
      e.log_sup += grid->margin;
      e.dlog_inf = gc.dlog(x, s_min, A_min);
      e.dlog_sup = gc.dlog(x, s_max, A_max);
      return e;
    };
    out.system.coords.push_back(std::move(c));
  }
  return out;
}

struct PhiGammaDraw {
  std::vector<Matrix> Phi;
  Matrix gamma;
  double epsilon = 1.0;
  std::int64_t T = 0;
};

inline MixtureKernel build_phi_gamma_kernel(const PhiGammaSystem& pg, const RandomLedger& ledger, std::int64_t t,
                                            const KernelConfig& cfg) {
  auto opt = ledger.substream(Stream::anneal, t, {0});
  return build_kernel(pg.system, cfg, opt);
}

// Perfect draw of (Phi, gamma) given (Z, S), keyed to time t of the ledger.
inline PhiGammaDraw perfect_phi_gamma(std::span<const int> Z, std::span<const int> S, const PriorConfig& prior,
                                      const CategoricalPanel& panel, const RandomLedger& ledger, std::int64_t t,
                                      KernelConfig cfg = {}) {
  cfg.build_upper = false;
  const auto pg = build_phi_gamma_system(Z, S, prior, panel);
  const auto kernel = build_phi_gamma_kernel(pg, ledger, t, cfg);
  const auto d = perfect_sample(kernel, pg.system, LedgerView{&ledger, Stream::Theta, t, 0});
  return {pg.phi_of(d.xi), pg.gamma_of(d.xi), kernel.epsilon(), d.T};
}

}  // namespace pmix
