#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

namespace voxelbench::memtrack {

namespace detail {
inline std::atomic<std::size_t>& current_counter() {
  static std::atomic<std::size_t> c{0};
  return c;
}
inline std::atomic<std::size_t>& peak_counter() {
  static std::atomic<std::size_t> c{0};
  return c;
}
}  // namespace detail

inline std::size_t current_bytes() { return detail::current_counter().load(); }
inline std::size_t peak_bytes() { return detail::peak_counter().load(); }

// Rebase the high-water mark to the current level.
inline void reset_peak() { detail::peak_counter().store(detail::current_counter().load()); }

inline void record_alloc(std::size_t bytes) {
  const std::size_t cur = detail::current_counter().fetch_add(bytes) + bytes;
  auto& peak = detail::peak_counter();
  std::size_t p = peak.load();
  while (p < cur && !peak.compare_exchange_weak(p, cur)) {
  }
}

inline void record_free(std::size_t bytes) { detail::current_counter().fetch_sub(bytes); }

// Allocator for the buffers whose footprint the resource accounting reports
// (tensors, GEMM workspaces). 64-byte alignment keeps Eigen maps on the
// vectorized path.
template <typename T>
struct Allocator {
  using value_type = T;

  Allocator() = default;
  template <typename U>
  Allocator(const Allocator<U>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    void* p = ::operator new(bytes, std::align_val_t{64});
    record_alloc(bytes);
    return static_cast<T*>(p);
  }

  void deallocate(T* p, std::size_t n) {
    record_free(n * sizeof(T));
    ::operator delete(p, std::align_val_t{64});
  }

  template <typename U>
  bool operator==(const Allocator<U>&) const {
    return true;
  }
};

}  // namespace voxelbench::memtrack
