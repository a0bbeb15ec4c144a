#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mtmil {

// Worker count: explicit setting, else MTMIL_THREADS, else hardware.
int effective_threads();
void set_threads(int n);

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// results are identical for any worker count. The lowest-index exception, if
// any, is rethrown on the calling thread.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int threads = effective_threads();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          if (!errors[w]) {
            errors[w] = std::current_exception();
            error_index[w] = i;
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  std::exception_ptr first;
  std::size_t first_index = n;
  for (std::size_t w = 0; w < workers; ++w) {
    if (errors[w] && error_index[w] < first_index) {
      first = errors[w];
      first_index = error_index[w];
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace mtmil
