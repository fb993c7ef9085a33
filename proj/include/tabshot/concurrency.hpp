#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tabshot {

/// Runs fn(i) for i in [0, count) on at most `bound` threads. Never more than
/// `bound` calls are in flight. The first exception thrown is rethrown after
/// every worker has stopped.
template <typename Fn>
void for_each_bounded(std::size_t count, std::size_t bound, Fn&& fn) {
    if (count == 0) return;
    bound = std::clamp<std::size_t>(bound, 1, count);
    if (bound == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            if (failed.load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(bound);
    for (std::size_t t = 0; t < bound; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace tabshot
