#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmix/error.hpp"
#include "pmix/special.hpp"

namespace pmix {

using CountMatrix = Eigen::MatrixXi;
using Matrix = Eigen::MatrixXd;

// States are 1-based everywhere outside this function's loop.
inline CountMatrix transition_counts(std::span<const int> seq, int K) {
  if (K < 1) throw InputError("K must be at least 1");
  if (seq.empty()) throw InputError("sequence must contain at least one state");
  CountMatrix N = CountMatrix::Zero(K, K);
  for (std::size_t r = 0; r < seq.size(); ++r) {
    if (seq[r] < 1 || seq[r] > K)
      throw InputError("state " + std::to_string(seq[r]) + " at position " + std::to_string(r + 1) +
                       " is outside [1," + std::to_string(K) + "]");
    if (r > 0) ++N(seq[r - 1] - 1, seq[r] - 1);
  }
  return N;
}

struct CategoricalPanel {
  int K = 0;
  std::vector<std::vector<int>> series;
  std::vector<CountMatrix> counts;

  CategoricalPanel() = default;
  CategoricalPanel(std::vector<std::vector<int>> s, int k) : K(k), series(std::move(s)) {
    counts.reserve(series.size());
    for (const auto& y : series) counts.push_back(transition_counts(y, K));
  }

  int n() const { return static_cast<int>(series.size()); }

  bool operator==(const CategoricalPanel& o) const { return K == o.K && series == o.series; }
};

struct PriorConfig {
  int M = 1;
  double alpha = 1.0;
  Matrix a, b;                  // Gamma shape / rate per (s,t)
  Matrix gamma_lo, gamma_hi;    // compact support of gamma; lo == hi pins gamma
  // Stick-breaking fractions of every transition row are restricted to
  // [delta, 1-delta]. Zero means no restriction, which is only usable when
  // gamma is pinned.
  double phi_truncation = 0.0;

  static PriorConfig defaults(int K, int M, double alpha = 1.0) {
    PriorConfig p;
    p.M = M;
    p.alpha = alpha;
    p.a = Matrix::Constant(K, K, 2.0);
    p.b = Matrix::Constant(K, K, 1.0);
    p.gamma_lo = Matrix::Constant(K, K, 0.1);
    p.gamma_hi = Matrix::Constant(K, K, 50.0);
    p.phi_truncation = 1e-3;
    return p;
  }

  static PriorConfig fixed_gamma(int K, int M, double gamma, double alpha = 1.0) {
    PriorConfig p = defaults(K, M, alpha);
    p.gamma_lo = p.gamma_hi = Matrix::Constant(K, K, gamma);
    p.phi_truncation = 0.0;
    return p;
  }

  int K() const { return static_cast<int>(a.rows()); }

  bool gamma_fixed() const { return (gamma_hi - gamma_lo).cwiseAbs().maxCoeff() == 0.0; }

  Matrix gamma_mid() const { return 0.5 * (gamma_lo + gamma_hi); }

  // Throws on invalid input; returns warnings that do not prevent sampling.
  std::vector<std::string> validate() const {
    const int K = static_cast<int>(a.rows());
    if (M < 1) throw ConfigurationError("M must be at least 1");
    if (!(alpha > 0.0)) throw ConfigurationError("alpha must be positive");
    auto square = [K](const Matrix& m, const char* name) {
      if (m.rows() != K || m.cols() != K)
        throw ConfigurationError(std::string(name) + " must be " + std::to_string(K) + "x" + std::to_string(K));
    };
    square(a, "a");
    square(b, "b");
    square(gamma_lo, "gamma_lo");
    square(gamma_hi, "gamma_hi");
    if (!(phi_truncation >= 0.0 && phi_truncation < 0.5))
      throw ConfigurationError("phi_truncation must lie in [0, 0.5)");
    std::vector<std::string> warnings;
    bool weak_shape = false;
    for (int s = 0; s < K; ++s)
      for (int t = 0; t < K; ++t) {
        if (!(a(s, t) > 0.0) || !(b(s, t) > 0.0)) throw ConfigurationError("Gamma hyperparameters must be positive");
        if (!(gamma_lo(s, t) > 0.0)) throw ConfigurationError("gamma support must exclude zero");
        if (gamma_hi(s, t) < gamma_lo(s, t)) throw ConfigurationError("gamma support has hi < lo");
        if (a(s, t) <= 1.0 && gamma_hi(s, t) > gamma_lo(s, t)) weak_shape = true;
      }
    if (weak_shape) warnings.push_back("some a_st <= 1: log-concavity of the gamma conditional is not guaranteed");
    if (!gamma_fixed() && phi_truncation <= 0.0)
      warnings.push_back("free gamma with phi_truncation = 0: the (Phi, gamma) kernel has no minorizing mass");
    return warnings;
  }
};

// Canonical first-appearance labels of an arbitrary labelling.
inline std::vector<int> first_appearance(std::span<const int> labels) {
  std::vector<int> out(labels.size());
  std::vector<std::pair<int, int>> seen;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    int found = 0;
    for (auto& [v, s] : seen)
      if (v == labels[j]) found = s;
    if (!found) {
      found = static_cast<int>(seen.size()) + 1;
      seen.emplace_back(labels[j], found);
    }
    out[j] = found;
  }
  return out;
}

inline int count_distinct(std::span<const int> labels) {
  int k = 0;
  for (int v : first_appearance(labels)) k = std::max(k, v);
  return k;
}

inline bool is_canonical(std::span<const int> S) {
  int d = 0;
  for (int s : S) {
    if (s < 1 || s > d + 1) return false;
    d = std::max(d, s);
  }
  return true;
}

// Partition produced by a sweep of slot updates whose labels c_j index the
// clusters of the remaining slots in order of first appearance (k_j + 1 for a
// fresh cluster): s_1 = 1, s_j = min(c_j, d_{j-1} + 1) with d the running
// maximum. Monotone in every c_j. On canonical input it is the identity.
inline std::vector<int> sequential_rule(std::span<const int> C) {
  std::vector<int> S(C.size());
  int d = 0;
  for (std::size_t j = 0; j < C.size(); ++j) {
    S[j] = j == 0 ? 1 : std::min(C[j], d + 1);
    d = std::max(d, S[j]);
  }
  return S;
}

struct ChainState {
  std::vector<int> Z;     // z_i in 1..M
  std::vector<int> C;     // slot labels drawn by the last configuration sweep
  std::vector<int> S;     // canonical partition, S = sequential_rule(C)
  std::vector<Matrix> Phi;  // one row-stochastic matrix per distinct component
  Matrix gamma;
  int k = 0;

  // Theta_M: the transition matrix carried by slot r (1-based).
  const Matrix& theta(int r) const { return Phi.at(S.at(r - 1) - 1); }

  void validate(const PriorConfig& prior, int n, int K) const {
    const int M = prior.M;
    if (static_cast<int>(Z.size()) != n) throw InputError("Z has wrong length");
    for (int z : Z)
      if (z < 1 || z > M) throw InputError("allocation outside 1..M");
    if (static_cast<int>(C.size()) != M || static_cast<int>(S.size()) != M)
      throw InputError("C and S must have length M");
    if (!is_canonical(S)) throw InputError("S violates s_1 = 1, s_j <= max(s_1..s_{j-1}) + 1");
    for (int c : C)
      if (c < 1 || c > M) throw InputError("configuration label outside 1..M");
    if (sequential_rule(C) != S) throw InputError("S does not follow from C");
    if (count_distinct(S) != k) throw InputError("k does not match the number of distinct components");
    if (static_cast<int>(Phi.size()) != k) throw InputError("Phi must hold k matrices");
    for (const auto& phi : Phi) {
      if (phi.rows() != K || phi.cols() != K) throw InputError("Phi matrix has wrong shape");
      for (int s = 0; s < K; ++s) {
        if (std::abs(phi.row(s).sum() - 1.0) > 1e-12) throw InputError("Phi row does not sum to one");
        if ((phi.row(s).array() < 0.0).any()) throw InputError("negative transition probability");
      }
    }
    if (gamma.rows() != K || gamma.cols() != K) throw InputError("gamma has wrong shape");
    for (int s = 0; s < K; ++s)
      for (int t = 0; t < K; ++t)
        if (gamma(s, t) < prior.gamma_lo(s, t) || gamma(s, t) > prior.gamma_hi(s, t))
          throw InputError("gamma outside its support");
  }
};

struct MixtureSummary {
  int p = 0;
  std::vector<double> pi;
  std::vector<int> occupancy;

  static MixtureSummary from_configuration(std::span<const int> S) {
    MixtureSummary m;
    const auto canon = first_appearance(S);
    for (int s : canon) {
      if (s > m.p) {
        m.p = s;
        m.occupancy.push_back(0);
      }
      ++m.occupancy[s - 1];
    }
    for (int c : m.occupancy) m.pi.push_back(static_cast<double>(c) / static_cast<double>(S.size()));
    return m;
  }
};

inline double loglik_series(const CountMatrix& N, const Matrix& theta) {
  double acc = 0.0;
  for (int s = 0; s < N.rows(); ++s)
    for (int t = 0; t < N.cols(); ++t) {
      const int c = N(s, t);
      if (c == 0) continue;
      if (theta(s, t) <= 0.0) return neg_inf;
      acc += c * std::log(theta(s, t));
    }
  return acc;
}

inline double mixture_density(const CountMatrix& N, const MixtureSummary& summary, std::span<const Matrix> Phi) {
  if (static_cast<int>(Phi.size()) < summary.p) throw InputError("fewer transition matrices than components");
  double acc = 0.0;
  for (int l = 0; l < summary.p; ++l) acc += summary.pi[l] * std::exp(loglik_series(N, Phi[l]));
  return acc;
}

}  // namespace pmix
