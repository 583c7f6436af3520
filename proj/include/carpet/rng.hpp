#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace carpet {

/// Philox4x32-10 counter-based generator (Salmon et al. 2011).
///
/// A stream is identified by (seed, stream index); the 128-bit counter holds
/// the stream index in its upper half and a block counter in its lower half,
/// so every Monte Carlo sample can own an independent, reproducible stream.
class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t seed, std::uint64_t stream);

  /// The raw bijection, exposed for known-answer tests.
  static Block block(Block counter, Key key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  Key key_;
  Block counter_;
  Block buffer_{};
  int used_ = 4;
};

}  // namespace carpet
