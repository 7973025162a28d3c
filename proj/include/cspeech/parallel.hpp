#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cspeech {

/// Selects between the OpenMP kernel and its serial reference. Both must give
/// identical results; the serial path exists so tests can check that.
enum class Execution { serial, parallel };

/// Number of fixed reduction blocks used by the parallel kernels. Partial sums
/// are formed per block and combined in block order, so results do not depend
/// on the thread count.
inline constexpr std::size_t kReductionBlocks = 64;

/// Runs fn(i) for i in [0, n). Exceptions thrown by fn are captured per index;
/// the lowest-index one is rethrown after the loop so error reporting is
/// deterministic under both execution modes.
template <typename Fn>
void for_each_index(std::size_t n, Execution exec, Fn&& fn, int max_threads = 0) {
  std::vector<std::exception_ptr> errors(n);
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
#ifdef _OPENMP
    const int threads = max_threads > 0 ? max_threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
#else
    (void)max_threads;
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
#endif
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Like for_each_index but keeps going past failures and returns the captured
/// exception for each index (null on success).
template <typename Fn>
std::vector<std::exception_ptr> for_each_index_collect(std::size_t n, Execution exec, Fn&& fn,
                                                       int max_threads = 0) {
  std::vector<std::exception_ptr> errors(n);
  for_each_index(
      n, exec,
      [&](std::size_t i) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      },
      max_threads);
  return errors;
}

}  // namespace cspeech
