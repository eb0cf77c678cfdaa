// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mope {

/// Keeps glibc from returning the many short-lived activation buffers to the
/// kernel after every step. No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace mope
