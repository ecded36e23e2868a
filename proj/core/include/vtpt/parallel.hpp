#pragma once

#include <functional>

namespace vtpt {

/// Number of worker threads used by parallel_chunks. Defaults to the hardware
/// concurrency; override via set_worker_threads or the VTPT_THREADS env var
/// (read once, at first use).
int worker_threads();
void set_worker_threads(int n);

/// Runs fn(0) .. fn(n_chunks-1) across worker threads. Chunk identity is the
/// only unit of scheduling: results must be written to per-chunk slots by the
/// caller and reduced in chunk order afterwards, which makes every consumer
/// bit-deterministic regardless of thread count.
void parallel_chunks(int n_chunks, const std::function<void(int)>& fn);

}  // namespace vtpt
