#pragma once

#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mmel {

/// Worker count from the MMEL_THREADS environment variable. Unset falls
/// back to the hardware concurrency; 0 means strict single-thread.
int worker_count_from_env();

/// Applies fn(i) for i in [0, n). Work is striped statically across
/// workers, so which thread computes which index is a pure function of
/// (n, threads); callers keep determinism by writing results into
/// index-addressed slots and reducing in index order afterwards.
template <typename Fn>
void parallel_for(int64_t n, int threads, Fn&& fn) {
    if (n <= 0) return;
    if (threads < 1) threads = 1;
    if (threads > n) threads = static_cast<int>(n);
    if (threads == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (int64_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace mmel
