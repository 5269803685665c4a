#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace crescendo {

/// Named random streams. Each consumer of randomness draws from its own
/// stream so that, e.g., changing the dropout rate does not perturb the
/// initialization or shuffling sequence.
enum class Stream : std::uint8_t { Init, Shuffle, Augment, Dropout, DropPath };

std::string_view stream_label(Stream stream);

/// Seeded 64-bit generator bound to a stream label. Equal (seed, label)
/// pairs yield equal sequences; sub-streams are forked by index so that
/// per-item randomness is independent of processing order.
class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  Rng(std::uint64_t seed, Stream stream);

  std::uint64_t seed() const noexcept { return seed_; }
  Stream stream() const noexcept { return stream_; }

  /// Child generator for (a, b); does not advance this generator.
  Rng fork(std::uint64_t a, std::uint64_t b = 0) const;

  double uniform();                              // [0, 1)
  std::size_t uniform_index(std::size_t count);  // [0, count)
  bool bernoulli(double p);
  double normal();

  std::mt19937_64& engine() noexcept { return engine_; }

  // UniformRandomBitGenerator, so std::shuffle and friends accept an Rng.
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

 private:
  Rng(std::uint64_t seed, Stream stream, std::uint64_t key);

  std::uint64_t seed_;
  Stream stream_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace crescendo
