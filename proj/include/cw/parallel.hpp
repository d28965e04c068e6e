#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cw {

inline int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("CW_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(std::min(hw, 8u)) : 1;
    }();
    return n;
}

// Runs fn(begin, end) over fixed-size blocks of [0, total). The block
// partition depends only on `total` and `block`, never on the thread count,
// so floating-point results are identical no matter how many workers run.
inline void parallel_blocks(std::size_t total, std::size_t block,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
    if (total == 0) return;
    block = std::max<std::size_t>(block, 1);
    const std::size_t nblocks = (total + block - 1) / block;
    const int workers = std::min<std::size_t>(worker_count(), nblocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < nblocks; ++b)
            fn(b * block, std::min(total, (b + 1) * block));
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t b = w; b < nblocks; b += workers)
                fn(b * block, std::min(total, (b + 1) * block));
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace cw
