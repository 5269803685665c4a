#include "crescendo/rng.hpp"

namespace crescendo {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view stream_label(Stream stream) {
  switch (stream) {
    case Stream::Init: return "init";
    case Stream::Shuffle: return "shuffle";
    case Stream::Augment: return "augment";
    case Stream::Dropout: return "dropout";
    case Stream::DropPath: return "droppath";
  }
  return "unknown";
}

Rng::Rng(std::uint64_t seed, Stream stream)
    : Rng(seed, stream, splitmix64(seed ^ splitmix64(fnv1a(stream_label(stream))))) {}

Rng::Rng(std::uint64_t seed, Stream stream, std::uint64_t key)
    : seed_(seed), stream_(stream), key_(key) {
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  engine_.seed(seq);
}

Rng Rng::fork(std::uint64_t a, std::uint64_t b) const {
  std::uint64_t k = splitmix64(key_ ^ splitmix64(a + 0x632be59bd9b4e019ULL));
  k = splitmix64(k ^ splitmix64(b + 0x8cb92ba72f3d8dd7ULL));
  return Rng(seed_, stream_, k);
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

std::size_t Rng::uniform_index(std::size_t count) {
  return std::uniform_int_distribution<std::size_t>(0, count - 1)(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

}  // namespace crescendo
