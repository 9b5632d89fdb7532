#pragma once

// Counter-based random numbers. Every uniform is a pure function of
// (master seed, run id, key tuple, draw counter), so any rejection loop or
// epoch replay sees exactly the same numbers regardless of scheduling.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

#include "pmix/error.hpp"

namespace pmix {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { Z = 1, C = 2, S = 3, Theta = 4, gamma = 5, anneal = 6, aux = 7 };

inline std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::Z: return "Z";
    case Stream::C: return "C";
    case Stream::S: return "S";
    case Stream::Theta: return "Theta";
    case Stream::gamma: return "gamma";
    case Stream::anneal: return "anneal";
    case Stream::aux: return "aux";
  }
  return "?";
}

// Uniform random bit generator over a single ledger key. Satisfies the
// standard URBG requirements so it can drive <random> distributions.
class Substream {
 public:
  using result_type = std::uint64_t;

  explicit Substream(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ ^ splitmix64(counter_++ + 0x632BE59BD9B4E019ULL)); }

  // Uniform on the open interval (0,1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  std::uint64_t key() const { return key_; }
  std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

class RandomLedger {
 public:
  static constexpr std::uint64_t retry_cap = std::uint64_t{1} << 20;

  explicit RandomLedger(std::uint64_t master_seed = 0, std::uint64_t run_id = 0)
      : seed_(master_seed), run_(run_id), base_(splitmix64(splitmix64(master_seed) ^ splitmix64(~run_id))) {}

  std::uint64_t master_seed() const { return seed_; }
  std::uint64_t run_id() const { return run_; }

  // Key words are arbitrary integers (negative times are fine).
  Substream substream(Stream s, std::int64_t t, std::initializer_list<std::int64_t> ids = {},
                      std::uint64_t retry = 0) const {
    if (retry >= retry_cap) throw PathologicalTarget("ledger retry counter exceeded 2^20 for one key");
    std::uint64_t h = mix(base_, static_cast<std::uint64_t>(s));
    h = mix(h, static_cast<std::uint64_t>(t));
    for (auto id : ids) h = mix(h, static_cast<std::uint64_t>(id));
    h = mix(h, ids.size());
    h = mix(h, retry);
    return Substream(h);
  }

  double uniform(Stream s, std::int64_t t, std::initializer_list<std::int64_t> ids = {},
                 std::uint64_t retry = 0) const {
    return substream(s, t, ids, retry).uniform();
  }

 private:
  static std::uint64_t mix(std::uint64_t h, std::uint64_t w) {
    return splitmix64(h ^ splitmix64(w + 0xD1B54A32D192ED03ULL));
  }

  std::uint64_t seed_;
  std::uint64_t run_;
  std::uint64_t base_;
};

}  // namespace pmix
