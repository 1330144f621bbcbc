#pragma once

namespace earconv {

/// Number of worker threads used by the convolution fast paths.
/// Defaults to the hardware concurrency, or EARCONV_THREADS when set.
/// Results are bit-identical for any thread count: every output element
/// is reduced in a fixed order by exactly one thread.
int thread_count();

/// Overrides the worker-thread count (clamped to >= 1).
void set_thread_count(int n);

}  // namespace earconv
