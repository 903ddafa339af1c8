#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace camp {

// Runs fn(0..n-1) on n threads (inline when n == 1) and rethrows the first
// failure by index.
template <typename Fn>
void run_parallel(std::size_t n, Fn&& fn) {
  if (n == 1) {
    fn(std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    pool.emplace_back([&, i] {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace camp
