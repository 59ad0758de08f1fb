#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pcbae {

/// Keep freed activation buffers in the heap instead of returning them to
/// the OS. Training reallocates the same large tensors every step and the
/// page faults from fresh mappings otherwise dominate small models.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace pcbae
