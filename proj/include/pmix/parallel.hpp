#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace pmix {

// Runs fn(index, worker) for index in [0, count) on up to `threads` workers
// with a static interleaved schedule. Results must not depend on the worker.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(count, 1));
  if (w <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k, std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  for (std::size_t id = 0; id < w; ++id)
    pool.emplace_back([&, id] {
      try {
        for (std::size_t k = id; k < count; k += w) fn(k, id);
      } catch (...) {
        errors[id] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pmix
