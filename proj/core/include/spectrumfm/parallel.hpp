#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace spectrumfm {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw > 8 ? 8 : hw);
}

// Static partition of [0, n) into `threads` contiguous chunks. Workers get
// disjoint ranges, so reductions done in worker order are deterministic for
// a fixed thread count.
inline void parallel_chunks(int n, int threads,
                            const std::function<void(int begin, int end, int worker)>& fn) {
    if (n <= 0) return;
    if (threads > n) threads = n;
    if (threads <= 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads - 1));
    for (int w = 1; w < threads; ++w) {
        const int begin = static_cast<int>(static_cast<long>(n) * w / threads);
        const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / threads);
        pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
    }
    fn(0, static_cast<int>(static_cast<long>(n) / threads), 0);
    for (auto& t : pool) t.join();
}

}  // namespace spectrumfm
