#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace skyline {

// Worker count for internal parallelism. SKYLINE_WORKERS overrides; a value
// of 1 disables threading. Outputs never depend on this number: parallel
// sections write disjoint slots and all reductions run in a fixed order.
inline int worker_count() {
    if (const char* env = std::getenv("SKYLINE_WORKERS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n). Each index is processed exactly once; fn must
// only write state owned by index i.
inline void parallel_for(int n, const std::function<void(int)>& fn, int workers = worker_count()) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min(workers, n);
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= n) break;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace skyline
