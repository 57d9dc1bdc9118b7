#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace tolins {

// Runs body(0..n-1) on up to `jobs` threads. Each index writes only its own
// output slot, so results are identical regardless of scheduling.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    const int workers = std::min(jobs, n);
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                body(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

inline int default_jobs() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

} // namespace tolins
