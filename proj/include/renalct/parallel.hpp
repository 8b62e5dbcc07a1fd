#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace renalct {

/// Calls fn(i) for i in [0, n) on at most `jobs` threads. Output order is the
/// caller's business (write into slot i). The first failure by index is
/// rethrown after all workers finish.
template <class Fn> void parallel_for(std::size_t n, int jobs, Fn &&fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads_wanted = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
    if (threads_wanted <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < threads_wanted; ++t)
            threads.emplace_back(worker);
        for (auto &t : threads)
            t.join();
    }
    for (const auto &e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace renalct
