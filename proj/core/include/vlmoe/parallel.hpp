// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

namespace vlmoe {

// Runs fn(i) for i in [0, n) across up to `threads` workers (0 = hardware
// concurrency). Results must be written to per-index slots; the partition is
// static so outputs are independent of scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

int default_thread_count();

}  // namespace vlmoe
