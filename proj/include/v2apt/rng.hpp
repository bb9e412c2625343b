// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace v2apt {

/// Position of a counter-based stream: the stream key plus the number of
/// 64-bit words already drawn.
struct RngCursor {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngCursor&, const RngCursor&) = default;
};

/// Counter-based generator. Output word `i` of a stream is a pure function of
/// (key, i), so streams can be split by name and resumed from a cursor.
/// Distributions are implemented here rather than via <random> so sequences
/// are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  static Rng from_cursor(RngCursor cursor);

  /// Independent child stream. Does not advance this stream.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes exactly two words.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  RngCursor cursor() const noexcept { return {key_, counter_}; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace v2apt
