#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace dkl {

/// Small counter-keyed generator: a stream is identified by a seed and a
/// tuple of counters (epoch, batch, element, ...), so draws do not depend on
/// evaluation order.
class CounterRng {
public:
  CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> key = {});

  std::uint64_t next_u64();
  /// Uniform on (0, 1).
  double uniform();
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

/// Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng &rng);

} // namespace dkl
