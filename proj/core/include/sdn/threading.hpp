#pragma once

#include <cstdint>
#include <functional>

namespace sdn {

// Number of worker threads used by parallel_for. Resolution order:
// SPLATDENOISE_THREADS environment variable (0 or unset = auto), clamped to
// the hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks over a
// persistent pool. Each index is processed by exactly one thread, so the
// result is deterministic as long as fn writes disjoint state per index.
// Falls back to a plain loop for small n or a single worker.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace sdn
