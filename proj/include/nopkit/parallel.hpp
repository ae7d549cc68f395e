// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace nopkit {

/// Process-wide cap on worker threads; 0 restores the hardware default.
void set_thread_limit(std::size_t threads);
[[nodiscard]] std::size_t thread_limit();

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = thread_limit()).
/// Each index runs exactly once; callers write results into slot i, so output
/// order never depends on scheduling. The exception of the lowest failing index
/// is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, std::size_t threads = 0);

} // namespace nopkit
