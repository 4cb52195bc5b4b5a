#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace fairlens {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results keep input
// order. Failed items stay empty in the returned vector and the first
// exception (lowest index) is stored in `error`.
template <typename Fn>
auto parallel_map_partial(std::size_t n, std::size_t workers, Fn&& fn, std::exception_ptr& error)
    -> std::vector<std::optional<decltype(fn(std::size_t{}))>> {
  using Result = decltype(fn(std::size_t{}));
  std::vector<std::optional<Result>> out(n);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        out[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return out;
}

template <typename Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  std::exception_ptr error;
  auto partial = parallel_map_partial(n, workers, std::forward<Fn>(fn), error);
  if (error) std::rethrow_exception(error);
  std::vector<decltype(fn(std::size_t{}))> out;
  out.reserve(n);
  for (auto& item : partial) out.push_back(std::move(*item));
  return out;
}

}  // namespace fairlens
