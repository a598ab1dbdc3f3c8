// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

#ifndef FIM_PARALLEL_HPP
#define FIM_PARALLEL_HPP

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fim {

namespace detail {

// One compiled body per Fn, shared by the serial and the threaded execution
// paths. If the loop were inlined at each call site instead, the optimizer
// could fuse multiply-adds differently per site and make results depend on
// the thread count; noinline/noclone pins a single rounding behavior.
#if defined(__clang__)
#define FIM_SINGLE_CODEGEN __attribute__((noinline))
#elif defined(__GNUC__)
#define FIM_SINGLE_CODEGEN __attribute__((noinline, noclone))
#else
#define FIM_SINGLE_CODEGEN
#endif

template <typename Fn>
FIM_SINGLE_CODEGEN void run_index_range(std::size_t begin, std::size_t end,
                                        Fn& fn) {
  for (std::size_t i = begin; i < end; ++i) fn(i);
}

#undef FIM_SINGLE_CODEGEN

}  // namespace detail

// Runs fn(i) for i in [0, n). Each index writes only its own output slot and
// every path executes the same compiled loop body, so the result is identical
// for any thread count. Exceptions are captured and rethrown on the calling
// thread.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::thread::hardware_concurrency();
  if (threads <= 1 || n <= 1) {
    detail::run_index_range(0, n, fn);
    return;
  }
  if (threads > n) threads = unsigned(n);

  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = std::size_t(t) * chunk;
    const std::size_t end = begin + chunk < n ? begin + chunk : n;
    if (begin >= end) break;
    pool.emplace_back([&, begin, end]() {
      try {
        detail::run_index_range(begin, end, fn);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fim

#endif  // FIM_PARALLEL_HPP
