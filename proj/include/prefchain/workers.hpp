#pragma once

// Bounded worker pool for independent work items.

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace prefchain {

// Runs fn(i) for every i in [0, n) on at most `workers` threads. Items are
// claimed in index order. Once `stop` returns true no further item is
// claimed; items already running finish. The first exception escaping fn is
// rethrown after all threads joined.
inline void run_bounded(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn,
                        const std::function<bool()>& stop = {}) {
    if (n == 0) return;
    if (workers < 1) workers = 1;
    if (workers > n) workers = n;

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            if (stop && stop()) return;
            {
                std::lock_guard lock(error_mutex);
                if (first_error) return;
            }
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace prefchain
