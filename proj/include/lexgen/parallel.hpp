#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace lexgen {

// Runs fn(begin, end) over disjoint chunks of [0, n). Chunk boundaries depend
// only on (n, threads), so results that are written per-index are identical
// for any thread count.
inline void parallel_for(size_t n, int threads,
                         const std::function<void(size_t, size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        fn(0, n);
        return;
    }
    size_t nthreads = std::min<size_t>(threads, n);
    size_t chunk = (n + nthreads - 1) / nthreads;
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (size_t t = 0; t < nthreads; ++t) {
        size_t lo = t * chunk;
        size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

inline int default_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace lexgen
