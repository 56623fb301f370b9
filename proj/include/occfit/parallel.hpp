#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace occ {

/// Runs fn(task) for every task in [0, n_tasks) on up to `threads` workers.
/// Tasks must write only to task-owned state; callers reduce results in task order,
/// which keeps outputs independent of the worker count.
void parallel_for(std::size_t n_tasks, int threads, const std::function<void(std::size_t)>& fn);

/// Counter-based random stream: the i-th draw depends only on (seed, stream, i).
/// Each ray owns a stream keyed by its global index, so parallel order never matters.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

/// Derives a sub-seed from a parent seed and a list of tags (step index, purpose, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace occ
