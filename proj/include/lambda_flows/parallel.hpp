#pragma once

/// Shared-nothing worker pool over an index range. Jobs claim indices off an
/// atomic counter and write into caller-owned slots, so results never depend
/// on scheduling; the thread count only changes wall time.

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lambda_flows {

/// Effective worker count: `requested` if positive, otherwise the hardware
/// concurrency, clamped to the job count and floored at one.
inline unsigned resolve_threads(unsigned requested, std::size_t jobs) {
    unsigned t = requested > 0 ? requested : std::thread::hardware_concurrency();
    if (t == 0) t = 1;
    if (jobs > 0 && jobs < static_cast<std::size_t>(t)) t = static_cast<unsigned>(jobs);
    return t;
}

/// Runs fn(i) for every i in [0, count). The first exception stops the pool
/// and is rethrown on the calling thread once every worker has drained.
template <typename Fn>
void parallel_for_index(std::size_t count, unsigned threads, Fn&& fn) {
    if (count == 0) return;
    const unsigned workers = resolve_threads(threads, count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
        while (!stop.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                stop.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace lambda_flows
