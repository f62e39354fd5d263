#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace srt {

// Runs fn(i) for i in [begin, end) on up to `jobs` threads. Work items must
// write to disjoint outputs; the first exception (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t jobs, Fn&& fn)
{
    if (begin >= end) return;
    const std::size_t n = end - begin;
    const std::size_t width = std::clamp<std::size_t>(jobs, 1, n);
    if (width == 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                fn(begin + k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(width - 1);
        for (std::size_t t = 1; t < width; ++t) pool.emplace_back(worker);
        worker();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace srt
