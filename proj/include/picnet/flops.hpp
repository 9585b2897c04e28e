#pragma once

#include <cstdint>

namespace picnet::flops {

// Global multiply-add counter used by the profiler oracle tests. Counting
// convention, applied identically by the instrumented primitives and by the
// closed-form formulas in bench.hpp:
//   - one multiply-accumulate = 2 FLOPs,
//   - a standalone add (bias, residual) = 1 FLOP,
//   - batch-norm application = 2 FLOPs per element (folded scale+shift),
//   - comparisons, max pooling, and activations = 0.
// Single-threaded by design; profiling and the oracle tests never run the
// counter concurrently.

extern bool enabled;
extern int64_t count;

inline void add(int64_t n) {
  if (enabled) count += n;
}

inline void reset() { count = 0; }

struct ScopedCounter {
  ScopedCounter() {
    enabled = true;
    count = 0;
  }
  ~ScopedCounter() { enabled = false; }
  int64_t value() const { return count; }
};

}  // namespace picnet::flops
