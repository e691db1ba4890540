#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace comet {

namespace parallel_detail {
inline std::atomic<int>& thread_setting() {
    static std::atomic<int> threads{1};
    return threads;
}
}  // namespace parallel_detail

// Worker cap for data-parallel loops. 1 runs everything on the caller.
inline void set_num_threads(int n) { parallel_detail::thread_setting() = std::max(1, n); }
inline int num_threads() { return parallel_detail::thread_setting(); }

// Resolve --threads against COMET_THREADS (the environment wins).
inline int resolve_threads(int flag_value) {
    if (const char* env = std::getenv("COMET_THREADS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (const std::exception&) {
        }
    }
    return std::max(1, flag_value);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is handled
// by exactly one chunk, so per-item results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 64) {
    const auto workers = static_cast<std::size_t>(num_threads());
    if (workers <= 1 || n <= min_chunk) {
        if (n > 0) fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunks = std::min(workers, (n + min_chunk - 1) / min_chunk);
    const std::size_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = c * step;
        const std::size_t end = std::min(n, begin + step);
        if (begin >= end) break;
        pool.emplace_back([&, c, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace comet
