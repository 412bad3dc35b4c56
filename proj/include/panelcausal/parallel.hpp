#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace panelcausal {

using Rng = std::mt19937_64;

/// Seed of the `index`-th independent substream of `seed` (splitmix64 of
/// the pair). Replications and permutation draws take their generator from
/// here, so results do not depend on how work is spread over threads.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) { return Rng(substream_seed(seed, index)); }

/// Worker count: `requested` if positive, else PANELCAUSAL_THREADS, else 1.
inline int resolve_threads(int requested) {
  if (const char* env = std::getenv("PANELCAUSAL_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return requested > 0 ? requested : 1;
}

/// Calls `fn(i)` for i in [0, n) on up to `threads` workers. `fn` must write
/// only to slot i of its outputs. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace panelcausal
