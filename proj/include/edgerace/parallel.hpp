#ifndef EDGERACE_PARALLEL_HPP
#define EDGERACE_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace edgerace {

/// Thread count taken from EDGERACE_THREADS, falling back to the hardware
/// concurrency. Always at least 1.
std::size_t default_threads();

/// Calls body(i) for i in [0, n). Work is handed out one index at a time, so
/// body must write its result into a slot owned by i; the caller then reduces
/// in index order, which keeps results independent of the thread count.
template <class Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::size_t count = threads < n ? threads : n;
    {
        std::vector<std::jthread> pool;
        pool.reserve(count);
        for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
}

} // namespace edgerace

#endif
