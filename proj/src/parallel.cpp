#include "mtmil/parallel.hpp"

#include <atomic>
#include <string>

namespace mtmil {

namespace {
std::atomic<int> g_threads{0};
}

void set_threads(int n) { g_threads.store(n > 0 ? n : 0); }

int effective_threads() {
  int n = g_threads.load();
  if (n > 0) return n;
  if (const char* env = std::getenv("MTMIL_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace mtmil
