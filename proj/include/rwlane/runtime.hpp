#ifndef RWLANE_RUNTIME_HPP
#define RWLANE_RUNTIME_HPP

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rwlane {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS. Every training step allocates the same few hundred large arrays, and
/// with glibc's default mmap threshold each one would be page-faulted in
/// again. Call once from main(); a no-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace rwlane

#endif  // RWLANE_RUNTIME_HPP
