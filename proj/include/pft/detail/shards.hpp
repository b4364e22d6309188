#pragma once

#include <atomic>
#include <exception>
#include <thread>

namespace pft::ad {

template <class R>
std::vector<R> run_shards(int n, int threads, const std::function<R(int)>& fn) {
  std::vector<std::optional<R>> slots(static_cast<std::size_t>(n));
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)].emplace(fn(i));
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    auto worker = [&] {
      for (int i = next++; i < n; i = next++) {
        try {
          slots[static_cast<std::size_t>(i)].emplace(fn(i));
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(threads, n); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    // lowest failing shard wins so the reported error does not depend on timing
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace pft::ad
