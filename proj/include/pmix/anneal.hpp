#pragma once

// Simulated annealing over a product of integer label ranges and compact
// real intervals, followed by a greedy polish. Small purely discrete spaces
// are enumerated instead.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "pmix/error.hpp"
#include "pmix/ledger.hpp"

namespace pmix {

struct AnnealConfig {
  int iterations = 500;
  double initial_temperature = 1.0;
  double cooling = 0.9;
  int cooling_interval = 25;
  double proposal_scale = 0.1;  // fraction of each continuous width
  int restarts = 4;
  std::size_t exhaustive_limit = 4096;
  int polish_rounds = 60;
  int probes = 64;  // random feasible probes used to widen bounds

  void validate() const {
    if (iterations < 1) throw ConfigurationError("anneal iterations must be at least 1");
    if (!(cooling > 0.0 && cooling < 1.0)) throw ConfigurationError("anneal cooling factor must lie in (0,1)");
    if (!(initial_temperature > 0.0)) throw ConfigurationError("anneal initial temperature must be positive");
    if (cooling_interval < 1) throw ConfigurationError("anneal cooling interval must be at least 1");
    if (!(proposal_scale > 0.0)) throw ConfigurationError("anneal proposal scale must be positive");
    if (restarts < 1) throw ConfigurationError("anneal restarts must be at least 1");
    if (probes < 0) throw ConfigurationError("anneal probes must be nonnegative");
  }
};

struct SearchSpace {
  std::vector<std::pair<int, int>> discrete;        // inclusive label ranges
  std::vector<std::pair<double, double>> continuous;  // compact intervals

  // Product of discrete range sizes, saturating at a large value.
  double discrete_cardinality() const {
    double n = 1.0;
    for (auto [a, b] : discrete) n = std::min(n * (b - a + 1), 1e18);
    return n;
  }

  bool continuous_pinned() const {
    for (auto [a, b] : continuous)
      if (b > a) return false;
    return true;
  }

  void check() const {
    for (auto [a, b] : discrete)
      if (b < a) throw ConfigurationError("empty discrete range in search space");
    for (auto [a, b] : continuous)
      if (!(b >= a)) throw ConfigurationError("empty continuous interval in search space");
  }
};

struct SearchPoint {
  std::vector<int> labels;
  std::vector<double> values;
  bool operator==(const SearchPoint&) const = default;
};

enum class Sense { minimize, maximize };

struct AnnealResult {
  SearchPoint argopt;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t evaluations = 0;
  bool exhaustive = false;
};

// Visits every point of a purely discrete space (continuous parts at lo).
template <class Visit>
void enumerate_space(const SearchSpace& space, Visit&& visit) {
  SearchPoint p;
  for (auto [a, b] : space.discrete) p.labels.push_back(a);
  for (auto [a, b] : space.continuous) p.values.push_back(a);
  const std::size_t d = p.labels.size();
  while (true) {
    visit(static_cast<const SearchPoint&>(p));
    std::size_t k = 0;
    while (k < d) {
      if (p.labels[k] < space.discrete[k].second) {
        ++p.labels[k];
        break;
      }
      p.labels[k] = space.discrete[k].first;
      ++k;
    }
    if (k == d) return;
  }
}

namespace detail {

inline bool better(double a, double b, Sense sense) {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return sense == Sense::minimize ? a < b : a > b;
}

inline SearchPoint center_point(const SearchSpace& space) {
  SearchPoint p;
  for (auto [a, b] : space.discrete) p.labels.push_back(a + (b - a) / 2);
  for (auto [a, b] : space.continuous) p.values.push_back(0.5 * (a + b));
  return p;
}

// Corner `mask` of the first few free dimensions (discrete first), others at the centre.
inline SearchPoint corner_point(const SearchSpace& space, unsigned mask) {
  SearchPoint p = center_point(space);
  unsigned bit = 0;
  for (std::size_t k = 0; k < space.discrete.size() && bit < 6; ++k) {
    auto [a, b] = space.discrete[k];
    if (b == a) continue;
    p.labels[k] = (mask >> bit & 1U) ? b : a;
    ++bit;
  }
  for (std::size_t k = 0; k < space.continuous.size() && bit < 6; ++k) {
    auto [a, b] = space.continuous[k];
    if (b == a) continue;
    p.values[k] = (mask >> bit & 1U) ? b : a;
    ++bit;
  }
  return p;
}

inline unsigned free_dims(const SearchSpace& space) {
  unsigned n = 0;
  for (auto [a, b] : space.discrete) n += b > a;
  for (auto [a, b] : space.continuous) n += b > a;
  return n;
}

}  // namespace detail

template <class Objective>
AnnealResult anneal_optimize(Objective&& f, const SearchSpace& space, Sense sense, const AnnealConfig& cfg,
                             Substream& stream, std::span<const SearchPoint> extra_starts = {}) {
  space.check();
  AnnealResult best;
  auto consider = [&](const SearchPoint& p, double v) {
    if (detail::better(v, best.value, sense)) {
      best.value = v;
      best.argopt = p;
    }
  };

  if (space.continuous_pinned() && space.discrete_cardinality() <= static_cast<double>(cfg.exhaustive_limit)) {
    enumerate_space(space, [&](const SearchPoint& p) {
      ++best.evaluations;
      consider(p, f(p));
    });
    best.exhaustive = true;
    if (std::isnan(best.value)) throw ConfigurationError("objective is infeasible on the whole search space");
    return best;
  }

  const double sign = sense == Sense::minimize ? 1.0 : -1.0;
  auto eval = [&](const SearchPoint& p) {
    ++best.evaluations;
    const double v = f(p);
    consider(p, v);
    return v;
  };

  // Candidate starts: caller-supplied, centre, then corners; ranked by value.
  std::vector<std::pair<double, SearchPoint>> starts;
  for (const auto& p : extra_starts) starts.emplace_back(eval(p), p);
  const std::size_t fixed = starts.size();
  {
    auto c = detail::center_point(space);
    starts.emplace_back(eval(c), c);
    const unsigned corners = 1U << std::min(detail::free_dims(space), 6U);
    for (unsigned m = 0; m < corners; ++m) {
      auto p = detail::corner_point(space, m);
      starts.emplace_back(eval(p), std::move(p));
    }
  }
  std::stable_sort(starts.begin() + static_cast<std::ptrdiff_t>(fixed), starts.end(),
                   [&](const auto& a, const auto& b) { return detail::better(a.first, b.first, sense); });
  const std::size_t chains = std::min(starts.size(), fixed + static_cast<std::size_t>(cfg.restarts));

  const std::size_t nd = space.discrete.size(), nc = space.continuous.size();
  std::vector<std::size_t> free;
  for (std::size_t k = 0; k < nd; ++k)
    if (space.discrete[k].second > space.discrete[k].first) free.push_back(k);
  for (std::size_t k = 0; k < nc; ++k)
    if (space.continuous[k].second > space.continuous[k].first) free.push_back(nd + k);

  if (!free.empty()) {
    for (std::size_t c = 0; c < chains; ++c) {
      SearchPoint cur = starts[c].second;
      double fcur = starts[c].first;
      double temp = cfg.initial_temperature;
      for (int it = 1; it <= cfg.iterations; ++it) {
        SearchPoint prop = cur;
        const std::size_t dim = free[stream() % free.size()];
        if (dim < nd) {
          auto [a, b] = space.discrete[dim];
          int v = a + static_cast<int>(stream() % static_cast<std::uint64_t>(b - a));
          if (v >= cur.labels[dim]) ++v;
          prop.labels[dim] = v;
        } else {
          auto [a, b] = space.continuous[dim - nd];
          const double u1 = stream.uniform(), u2 = stream.uniform();
          const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
          double v = cur.values[dim - nd] + z * cfg.proposal_scale * (b - a);
          const double w = b - a;
          // Reflect into [a, b].
          v = std::fmod(std::abs(v - a), 2.0 * w);
          prop.values[dim - nd] = a + (v <= w ? v : 2.0 * w - v);
        }
        const double fp = eval(prop);
        const double u = stream.uniform();
        if (!std::isnan(fp)) {
          const double delta = std::isnan(fcur) ? -1.0 : sign * (fp - fcur);
          if (delta <= 0.0 || u < std::exp(-delta / temp)) {
            cur = std::move(prop);
            fcur = fp;
          }
        }
        if (it % cfg.cooling_interval == 0) temp *= cfg.cooling;
      }
    }

    // Greedy polish from the best point: full scans of each discrete
    // coordinate and compass steps with halving for continuous ones.
    SearchPoint cur = best.argopt;
    double fcur = best.value;
    std::vector<double> step(nc);
    for (std::size_t k = 0; k < nc; ++k) step[k] = 0.25 * (space.continuous[k].second - space.continuous[k].first);
    for (int round = 0; round < cfg.polish_rounds; ++round) {
      bool improved = false;
      for (std::size_t k = 0; k < nd; ++k) {
        auto [a, b] = space.discrete[k];
        if (b == a || (b - a) > 64) continue;
        for (int v = a; v <= b; ++v) {
          if (v == cur.labels[k]) continue;
          SearchPoint p = cur;
          p.labels[k] = v;
          const double fp = eval(p);
          if (detail::better(fp, fcur, sense)) {
            cur = std::move(p);
            fcur = fp;
            improved = true;
          }
        }
      }
      bool any_step = false;
      for (std::size_t k = 0; k < nc; ++k) {
        auto [a, b] = space.continuous[k];
        if (b == a || step[k] < 1e-9 * (b - a)) continue;
        any_step = true;
        bool moved = false;
        for (double dir : {1.0, -1.0}) {
          SearchPoint p = cur;
          p.values[k] = std::clamp(cur.values[k] + dir * step[k], a, b);
          if (p.values[k] == cur.values[k]) continue;
          const double fp = eval(p);
          if (detail::better(fp, fcur, sense)) {
            cur = std::move(p);
            fcur = fp;
            moved = improved = true;
            break;
          }
        }
        if (!moved) step[k] *= 0.5;
      }
      if (!improved && !any_step) break;
    }
  }

  if (std::isnan(best.value)) throw ConfigurationError("objective is infeasible at every visited point");
  return best;
}

}  // namespace pmix
