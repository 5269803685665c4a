#include "crescendo/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace crescendo {
namespace {

std::atomic<std::size_t> override_count{0};

std::size_t default_count() {
  static const std::size_t count = [] {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CRESCENDO_THREADS")) {
      try {
        const long cap = std::stol(env);
        if (cap > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
      } catch (...) {
        // unparsable value: keep the hardware default
      }
    }
    return n;
  }();
  return count;
}

}  // namespace

std::size_t thread_count() {
  const std::size_t forced = override_count.load(std::memory_order_relaxed);
  return forced > 0 ? forced : default_count();
}

void set_thread_count(std::size_t count) { override_count.store(count, std::memory_order_relaxed); }

}  // namespace crescendo
