#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vpetabc {

/// Worker count from VPETABC_WORKERS, else hardware concurrency (at least 1).
unsigned default_workers();

/// Static partition of [0, count) into at most `workers` contiguous chunks;
/// fn(begin, end) runs once per chunk. The partition only affects scheduling,
/// never results, as long as fn writes disjoint outputs.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
    if (count == 0) return;
    const std::size_t chunks = std::min<std::size_t>(std::max(1u, workers), count);
    if (chunks == 1) {
        fn(std::size_t{0}, count);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    threads.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = count * c / chunks;
        const std::size_t end = count * (c + 1) / chunks;
        threads.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace vpetabc
