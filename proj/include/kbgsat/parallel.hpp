#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kbgsat {

inline int default_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

/// Splits [0, n) into at most `workers` contiguous chunks and runs
/// fn(begin, end) on each. The first exception thrown by a chunk is rethrown.
template <typename Fn>
void parallel_chunks(std::size_t n, int workers, Fn&& fn) {
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), std::max<std::size_t>(n, 1));
    if (w <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + w - 1) / w;
    std::vector<std::exception_ptr> errors(w);
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < w; ++k) {
        const std::size_t b = k * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        threads.emplace_back([&, k, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace kbgsat
