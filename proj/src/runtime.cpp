#include "earconv/runtime.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace earconv {

namespace {

int default_threads() {
  if (const char* env = std::getenv("EARCONV_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) {
      return n;
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::atomic<int>& thread_count_slot() {
  static std::atomic<int> count{default_threads()};
  return count;
}

}  // namespace

int thread_count() { return thread_count_slot().load(std::memory_order_relaxed); }

void set_thread_count(int n) {
  thread_count_slot().store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

}  // namespace earconv
