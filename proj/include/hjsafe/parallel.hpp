#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace hjsafe {

// Process-wide worker count, set once by the CLI --threads flag. Default 1.
inline int& thread_count() {
    static int n = 1;
    return n;
}

inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

// Runs f(i) for i in [0, n). Iterations must be independent (disjoint writes).
// Results do not depend on the worker count; reductions over per-index
// outputs must be done by the caller in index order.
template <class F>
void parallel_for(int64_t n, F&& f) {
    const int workers = std::min<int64_t>(thread_count(), n);
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int64_t> next{0};
    auto run = [&] {
        constexpr int64_t chunk = 16;
        for (;;) {
            const int64_t start = next.fetch_add(chunk);
            if (start >= n) return;
            const int64_t end = std::min(start + chunk, n);
            for (int64_t i = start; i < end; ++i) f(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
}

}  // namespace hjsafe
