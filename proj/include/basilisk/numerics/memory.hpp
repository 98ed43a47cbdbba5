#pragma once

// Byte accounting for tensor storage.
//
// Every Tensor allocates through TrackingAllocator, so the live/peak counters
// below see all dense storage created by the library. The benchmark harness
// uses them as a device-independent stand-in for accelerator peak memory, and
// an optional budget turns over-allocation into a BudgetExceeded exception
// (the desk-scale analogue of an out-of-memory failure).

#include <atomic>
#include <cstddef>
#include <limits>
#include <new>
#include <stdexcept>
#include <string>

namespace basilisk::memory {

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::size_t requested, std::size_t live, std::size_t budget)
      : std::runtime_error("memory budget exceeded: requested " + std::to_string(requested) +
                           " bytes with " + std::to_string(live) + " live, budget " +
                           std::to_string(budget)),
        requested_(requested) {}
  std::size_t requested() const noexcept { return requested_; }

 private:
  std::size_t requested_;
};

namespace detail {
inline std::atomic<std::size_t> live_bytes{0};
inline std::atomic<std::size_t> peak_bytes{0};
inline std::atomic<std::size_t> budget_bytes{std::numeric_limits<std::size_t>::max()};
inline std::atomic<std::size_t> allocation_count{0};
}  // namespace detail

inline std::size_t live_bytes() noexcept { return detail::live_bytes.load(); }
inline std::size_t peak_bytes() noexcept { return detail::peak_bytes.load(); }
inline std::size_t allocation_count() noexcept { return detail::allocation_count.load(); }

/// Restarts peak tracking from the current live total.
inline void reset_peak() noexcept { detail::peak_bytes.store(detail::live_bytes.load()); }

inline void set_budget(std::size_t bytes) noexcept { detail::budget_bytes.store(bytes); }
inline void clear_budget() noexcept {
  detail::budget_bytes.store(std::numeric_limits<std::size_t>::max());
}
inline std::size_t budget() noexcept { return detail::budget_bytes.load(); }

inline void on_allocate(std::size_t bytes) {
  const std::size_t live = detail::live_bytes.load();
  const std::size_t limit = detail::budget_bytes.load();
  if (bytes > limit || live > limit - bytes) throw BudgetExceeded(bytes, live, limit);
  const std::size_t now = detail::live_bytes.fetch_add(bytes) + bytes;
  detail::allocation_count.fetch_add(1);
  std::size_t prev = detail::peak_bytes.load();
  while (now > prev && !detail::peak_bytes.compare_exchange_weak(prev, now)) {
  }
}

inline void on_deallocate(std::size_t bytes) noexcept { detail::live_bytes.fetch_sub(bytes); }

/// Scoped budget; restores the previous limit on exit.
class BudgetScope {
 public:
  explicit BudgetScope(std::size_t bytes) : previous_(budget()) { set_budget(bytes); }
  ~BudgetScope() { set_budget(previous_); }
  BudgetScope(const BudgetScope&) = delete;
  BudgetScope& operator=(const BudgetScope&) = delete;

 private:
  std::size_t previous_;
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    on_allocate(bytes);
    try {
      return static_cast<T*>(::operator new(bytes));
    } catch (...) {
      on_deallocate(bytes);
      throw;
    }
  }

  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p);
    on_deallocate(n * sizeof(T));
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace basilisk::memory
