#pragma once

// Perfect sampling from a joint law whose full conditionals are log-concave on
// compact intervals. The one-sweep Gibbs kernel is split as
// P = eps * g + (1 - eps) * R with g independent of the current state; a
// geometric regeneration time then yields exact draws.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pmix/anneal.hpp"
#include "pmix/ars.hpp"
#include "pmix/error.hpp"
#include "pmix/ledger.hpp"
#include "pmix/piecewise_exp.hpp"
#include "pmix/special.hpp"

namespace pmix {

using ConditionalFn = std::function<double(double, std::span<const double>)>;

struct ConditionalExtremes {
  double log_inf, log_sup;    // of the normalized log density at x
  double dlog_inf, dlog_sup;  // of its derivative at x
};

enum class AbscissaGrid { endpoints, midpoints };

struct LogConcaveCoordinate {
  std::string name;
  double lo = 0.0, hi = 1.0;
  // Normalized log conditional density on [lo, hi] and its derivative. The
  // state vector carries every coordinate; entry i itself is ignored.
  ConditionalFn log_density, dlog_density;
  // Optional exact conditional draw; ARS is used otherwise.
  std::function<double(std::span<const double>, Substream&)> sampler;
  // Optional exact extremes over the other coordinates at a given x;
  // annealing over their box is used otherwise.
  std::function<ConditionalExtremes(double)> extremes;
  // The conditional does not depend on the other coordinates.
  bool independent = false;
  AbscissaGrid grid = AbscissaGrid::endpoints;
  Stream stream = Stream::Theta;
};

struct LogConcaveSystem {
  std::vector<LogConcaveCoordinate> coords;

  std::size_t dim() const { return coords.size(); }

  std::vector<double> centre() const {
    std::vector<double> xi;
    for (const auto& c : coords) xi.push_back(0.5 * (c.lo + c.hi));
    return xi;
  }

  std::vector<double> random_point(Substream& s) const {
    std::vector<double> xi;
    for (const auto& c : coords) xi.push_back(c.lo + (c.hi - c.lo) * s.uniform());
    return xi;
  }
};

struct KernelConfig {
  int abscissae = 8;
  bool build_upper = true;
  // Independent coordinates with an exact sampler use their own density as
  // the minorizing component (eps_i = 1) instead of a chord hull.
  bool exact_independent = true;
  AnnealConfig anneal;
};

struct CoordinateEnvelope {
  bool exact = false;         // lower component is the conditional itself
  PiecewiseExponential hull;  // exp(hull) on the support
  std::vector<double> abscissae;
  double log_mass = 0.0;
};

struct MixtureKernel {
  std::vector<CoordinateEnvelope> lower, upper;
  double log_epsilon = 0.0, log_eta = 0.0;
  bool has_upper = false;

  double epsilon() const { return std::exp(log_epsilon); }
  double eta() const { return std::exp(log_eta); }
  double coordinate_epsilon(std::size_t i) const { return std::exp(lower[i].log_mass); }
  double coordinate_eta(std::size_t i) const { return std::exp(upper[i].log_mass); }
};

// Keys every uniform of one perfect draw: (stream, time, tag, kind, a, b, c).
struct LedgerView {
  const RandomLedger* ledger = nullptr;
  Stream stream = Stream::Theta;
  std::int64_t time = 0;
  std::int64_t tag = 0;

  Substream sub(Stream s, std::int64_t kind, std::int64_t a = 0, std::int64_t b = 0, std::int64_t c = 0,
                std::uint64_t retry = 0) const {
    return ledger->substream(s, time, {tag, kind, a, b, c}, retry);
  }
};

namespace lc_detail {

enum Kind : std::int64_t { regeneration = 1, gm_draw = 2, proposal = 3, accept = 4, envelope = 5, optimizer = 6 };

inline std::vector<double> abscissae_for(const LogConcaveCoordinate& c, int m) {
  if (m < 2) throw ConfigurationError("envelopes need at least two abscissae");
  std::vector<double> xs(m);
  for (int j = 0; j < m; ++j)
    xs[j] = c.grid == AbscissaGrid::endpoints ? c.lo + (c.hi - c.lo) * j / (m - 1)
                                              : c.lo + (c.hi - c.lo) * (j + 0.5) / m;
  return xs;
}

// Extremes of log density / derivative at x over the other coordinates,
// by annealing when no structural hook is supplied.
inline ConditionalExtremes extremes_at(const LogConcaveSystem& sys, std::size_t i, double x, bool want_upper,
                                       const KernelConfig& cfg, Substream& stream) {
  const auto& c = sys.coords[i];
  if (c.extremes) return c.extremes(x);
  std::vector<double> xi = sys.centre();
  if (c.independent) {
    const double v = c.log_density(x, xi), d = c.dlog_density(x, xi);
    return {v, v, d, d};
  }
  SearchSpace space;
  for (std::size_t k = 0; k < sys.dim(); ++k)
    space.continuous.emplace_back(k == i ? x : sys.coords[k].lo, k == i ? x : sys.coords[k].hi);
  auto lf = [&](const SearchPoint& p) { return c.log_density(x, p.values); };
  auto df = [&](const SearchPoint& p) { return c.dlog_density(x, p.values); };
  ConditionalExtremes e{};
  e.log_inf = anneal_optimize(lf, space, Sense::minimize, cfg.anneal, stream).value;
  if (want_upper) {
    e.log_sup = anneal_optimize(lf, space, Sense::maximize, cfg.anneal, stream).value;
    e.dlog_inf = anneal_optimize(df, space, Sense::minimize, cfg.anneal, stream).value;
    e.dlog_sup = anneal_optimize(df, space, Sense::maximize, cfg.anneal, stream).value;
  }
  return e;
}

// Chord through (x_j, L_j); -inf outside [x_1, x_m].
inline PiecewiseExponential chord_hull(const std::vector<double>& xs, const std::vector<double>& L, double lo,
                                       double hi) {
  std::vector<LinearPiece> pieces;
  if (xs.front() > lo) pieces.push_back({lo, xs.front(), neg_inf, 0.0});
  for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
    const double w = xs[j + 1] - xs[j];
    if (L[j] == neg_inf || L[j + 1] == neg_inf) {
      pieces.push_back({xs[j], xs[j + 1], neg_inf, 0.0});
    } else {
      pieces.push_back({xs[j], xs[j + 1], L[j], (L[j + 1] - L[j]) / w});
    }
  }
  if (xs.back() < hi) pieces.push_back({xs.back(), hi, neg_inf, 0.0});
  return PiecewiseExponential(std::move(pieces));
}

struct Line {
  double x0, h, slope;  // h + slope * (x - x0)
  double at(double x) const { return h + slope * (x - x0); }
};

// min_j of kinked tangents H_j + (x - x_j) * (x >= x_j ? D+_j : D-_j),
// computed exactly by splitting at kinks and pairwise crossings.
inline PiecewiseExponential kinked_upper_hull(const std::vector<double>& xs, const std::vector<ConditionalExtremes>& e,
                                              double lo, double hi) {
  struct Branch {
    Line line;
    double from, to;
  };
  std::vector<Branch> br;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double H = e[j].log_sup, dp = e[j].dlog_sup, dm = e[j].dlog_inf;
    if (!std::isfinite(H)) continue;
    if (std::isfinite(dm)) br.push_back({{xs[j], H, dm}, lo, xs[j]});
    if (std::isfinite(dp)) br.push_back({{xs[j], H, dp}, xs[j], hi});
  }
  if (br.empty()) throw EnvelopeDegenerate("no finite tangent for the upper hull");
  std::vector<double> cuts{lo, hi};
  for (const auto& b : br) cuts.push_back(std::clamp(b.line.x0, lo, hi));
  for (std::size_t p = 0; p < br.size(); ++p)
    for (std::size_t q = p + 1; q < br.size(); ++q) {
      const double ds = br[p].line.slope - br[q].line.slope;
      if (ds == 0.0) continue;
      const double x = (br[q].line.at(0.0) - br[p].line.at(0.0)) / ds;
      if (x > lo && x < hi) cuts.push_back(x);
    }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<LinearPiece> pieces;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1], mid = 0.5 * (a + b);
    // Tangent j covers x through the branch whose side contains x; a branch
    // not covering mid is ignored, and every j with a finite H has one.
    double best = std::numeric_limits<double>::infinity();
    const Line* arg = nullptr;
    for (const auto& bb : br) {
      if (mid < bb.from || mid > bb.to) continue;
      const double v = bb.line.at(mid);
      if (v < best) {
        best = v;
        arg = &bb.line;
      }
    }
    if (!arg) {
      pieces.push_back({a, b, std::numeric_limits<double>::infinity(), 0.0});
      continue;
    }
    pieces.push_back({a, b, arg->at(a), arg->slope});
  }
  for (const auto& p : pieces)
    if (!std::isfinite(p.at_lo)) throw EnvelopeDegenerate("upper hull is unbounded on part of the support");
  return PiecewiseExponential(std::move(pieces));
}

}  // namespace lc_detail

inline CoordinateEnvelope build_lower_envelope(const LogConcaveSystem& sys, std::size_t i, const KernelConfig& cfg,
                                               Substream& opt_stream) {
  const auto& c = sys.coords.at(i);
  CoordinateEnvelope env;
  if (c.independent && c.sampler && cfg.exact_independent) {
    env.exact = true;
    env.log_mass = 0.0;
    return env;
  }
  env.abscissae = lc_detail::abscissae_for(c, cfg.abscissae);
  std::vector<double> L;
  for (double x : env.abscissae) L.push_back(lc_detail::extremes_at(sys, i, x, false, cfg, opt_stream).log_inf);
  env.hull = lc_detail::chord_hull(env.abscissae, L, c.lo, c.hi);
  env.log_mass = env.hull.log_total();
  if (!(env.log_mass > neg_inf)) throw EnvelopeDegenerate("lower envelope of " + c.name + " has zero mass");
  return env;
}

inline CoordinateEnvelope build_upper_envelope(const LogConcaveSystem& sys, std::size_t i, const KernelConfig& cfg,
                                               Substream& opt_stream) {
  const auto& c = sys.coords.at(i);
  CoordinateEnvelope env;
  env.abscissae = lc_detail::abscissae_for(c, cfg.abscissae);
  std::vector<ConditionalExtremes> e;
  for (double x : env.abscissae) e.push_back(lc_detail::extremes_at(sys, i, x, true, cfg, opt_stream));
  env.hull = lc_detail::kinked_upper_hull(env.abscissae, e, c.lo, c.hi);
  env.log_mass = env.hull.log_total();
  return env;
}

inline MixtureKernel build_kernel(const LogConcaveSystem& sys, const KernelConfig& cfg, Substream& opt_stream) {
  MixtureKernel k;
  k.log_epsilon = 0.0;
  for (std::size_t i = 0; i < sys.dim(); ++i) {
    k.lower.push_back(build_lower_envelope(sys, i, cfg, opt_stream));
    k.log_epsilon += k.lower.back().log_mass;
  }
  k.log_epsilon = std::min(k.log_epsilon, 0.0);
  if (cfg.build_upper) {
    k.has_upper = true;
    k.log_eta = 0.0;
    for (std::size_t i = 0; i < sys.dim(); ++i) {
      k.upper.push_back(build_upper_envelope(sys, i, cfg, opt_stream));
      k.log_eta += k.upper.back().log_mass;
    }
  }
  return k;
}

// log of eps * g_m(xi).
inline double log_eps_g(const MixtureKernel& k, const LogConcaveSystem& sys, std::span<const double> xi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < sys.dim(); ++i)
    acc += k.lower[i].exact ? sys.coords[i].log_density(xi[i], xi) : k.lower[i].hull.log_value(xi[i]);
  return acc;
}

inline double log_eta_f(const MixtureKernel& k, std::span<const double> xi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < k.upper.size(); ++i) acc += k.upper[i].hull.log_value(xi[i]);
  return acc;
}

// Log density of one Gibbs sweep (coordinates in order) from `from` to `to`.
inline double log_kernel_P(const LogConcaveSystem& sys, std::span<const double> to, std::span<const double> from) {
  std::vector<double> mix(from.begin(), from.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sys.dim(); ++i) {
    acc += sys.coords[i].log_density(to[i], mix);
    mix[i] = to[i];
  }
  return acc;
}

inline double draw_conditional(const LogConcaveCoordinate& c, std::span<const double> xi, Substream& s) {
  if (c.sampler) return c.sampler(xi, s);
  std::vector<double> state(xi.begin(), xi.end());
  auto h = [&](double x) { return c.log_density(x, state); };
  auto dh = [&](double x) { return c.dlog_density(x, state); };
  std::vector<double> xs;
  // Interior points keep the hull finite when the density vanishes at an end.
  for (int j = 1; j <= 5; ++j) xs.push_back(c.lo + (c.hi - c.lo) * j / 6.0);
  AdaptiveRejectionSampler ars(h, dh, c.lo, c.hi, {}, xs);
  return ars.sample(s);
}

inline std::vector<double> sample_gm(const MixtureKernel& k, const LogConcaveSystem& sys, const LedgerView& view) {
  std::vector<double> xi(sys.dim());
  for (std::size_t i = 0; i < sys.dim(); ++i) {
    auto s = view.sub(sys.coords[i].stream, lc_detail::gm_draw, static_cast<std::int64_t>(i));
    xi[i] = k.lower[i].exact ? draw_conditional(sys.coords[i], xi, s) : k.lower[i].hull.sample(s);
  }
  return xi;
}

enum class KernelMethod { direct, rejection };

struct KernelDrawStats {
  std::size_t proposals = 0;
  std::size_t squeezed = 0;
};

// One draw from P(. | from). `step` and `attempt` distinguish the ledger keys
// of repeated calls.
inline std::vector<double> sample_kernel_P(const MixtureKernel& k, const LogConcaveSystem& sys,
                                           std::span<const double> from, const LedgerView& view, KernelMethod method,
                                           std::int64_t step = 0, std::uint64_t attempt = 0,
                                           KernelDrawStats* stats = nullptr) {
  if (method == KernelMethod::direct) {
    std::vector<double> xi(from.begin(), from.end());
    for (std::size_t i = 0; i < sys.dim(); ++i) {
      auto s = view.sub(sys.coords[i].stream, lc_detail::proposal, step, static_cast<std::int64_t>(i), 0, attempt);
      xi[i] = draw_conditional(sys.coords[i], xi, s);
    }
    if (stats) ++stats->proposals;
    return xi;
  }
  if (!k.has_upper) throw ConfigurationError("rejection sampling from the kernel needs upper envelopes");
  std::vector<double> xi(sys.dim());
  for (std::uint64_t r = 0; r < RandomLedger::retry_cap; ++r) {
    for (std::size_t i = 0; i < sys.dim(); ++i) {
      auto s = view.sub(sys.coords[i].stream, lc_detail::envelope, step, static_cast<std::int64_t>(i), 0, r);
      xi[i] = k.upper[i].hull.sample(s);
    }
    if (stats) ++stats->proposals;
    const double log_w = std::log(view.sub(view.stream, lc_detail::accept, step, -1, 0, r).uniform());
    const double lf = log_eta_f(k, xi);
    if (log_w <= log_eps_g(k, sys, xi) - lf) {
      if (stats) ++stats->squeezed;
      return xi;
    }
    if (log_w <= log_kernel_P(sys, xi, from) - lf) return xi;
  }
  throw PathologicalTarget("rejection sampling from the Gibbs kernel exceeded its retry cap");
}

// Draw from the residual R = (P - eps g) / (1 - eps).
inline std::vector<double> sample_residual(const MixtureKernel& k, const LogConcaveSystem& sys,
                                           std::span<const double> from, const LedgerView& view, std::int64_t step,
                                           std::size_t proposal_cap = 1000000, KernelDrawStats* stats = nullptr) {
  if (k.log_epsilon >= 0.0) throw ConfigurationError("residual kernel undefined when eps = 1");
  const std::uint64_t cap = std::min<std::uint64_t>(proposal_cap, RandomLedger::retry_cap);
  for (std::uint64_t r = 0; r < cap; ++r) {
    auto xi = sample_kernel_P(k, sys, from, view, KernelMethod::direct, step, r);
    if (stats) ++stats->proposals;
    const double lg = log_eps_g(k, sys, xi), lp = log_kernel_P(sys, xi, from);
    const double log_ratio = lg - lp;
    if (log_ratio > 1e-12) throw KernelInconsistency("minorizing component exceeds the kernel density");
    const double u = view.sub(view.stream, lc_detail::accept, step, -2, 0, r).uniform();
    if (u <= -std::expm1(std::min(log_ratio, 0.0))) return xi;
  }
  throw PathologicalTarget("residual sampling exceeded its proposal cap");
}

struct PerfectDraw {
  std::vector<double> xi;
  std::int64_t T = 0;
  std::size_t proposals = 0;
};

inline std::int64_t regeneration_time(double log_epsilon, double u) {
  if (log_epsilon >= 0.0) return 0;
  const double log_q = std::log1p(-std::exp(log_epsilon));  // log(1 - eps)
  const double t = std::floor(std::log(u) / log_q);
  if (!(t < static_cast<double>(RandomLedger::retry_cap)))
    throw EnvelopeDegenerate("regeneration time too large: minorizing mass is too small");
  return static_cast<std::int64_t>(t);
}

// Perfect draw: regeneration time, then residual steps forward.
inline PerfectDraw perfect_sample(const MixtureKernel& k, const LogConcaveSystem& sys, const LedgerView& view,
                                  std::size_t proposal_cap = 1000000) {
  PerfectDraw out;
  out.T = regeneration_time(k.log_epsilon, view.sub(view.stream, lc_detail::regeneration).uniform());
  out.xi = sample_gm(k, sys, view);
  KernelDrawStats stats;
  for (std::int64_t tau = 1; tau <= out.T; ++tau) out.xi = sample_residual(k, sys, out.xi, view, tau, proposal_cap, &stats);
  out.proposals = stats.proposals;
  return out;
}

// Second differences of each conditional at random states; returns the
// largest relative value found (nonpositive for log-concave systems).
inline double spot_check_log_concavity(const LogConcaveSystem& sys, Substream& s, int states = 20, int points = 50) {
  double worst = neg_inf;
  for (int r = 0; r < states; ++r) {
    const auto xi = sys.random_point(s);
    for (std::size_t i = 0; i < sys.dim(); ++i) {
      const auto& c = sys.coords[i];
      for (int j = 1; j <= points; ++j) {
        const double x = c.lo + (c.hi - c.lo) * j / (points + 1);
        const double h = 1e-4 * std::max(1.0, std::abs(x)) * std::min(1.0, c.hi - c.lo);
        const double f0 = c.log_density(x, xi);
        const double d2 = (c.log_density(x + h, xi) - 2.0 * f0 + c.log_density(x - h, xi)) / (h * h);
        worst = std::max(worst, d2 / std::max(1.0, std::abs(f0)));
      }
    }
  }
  return worst;
}

}  // namespace pmix
