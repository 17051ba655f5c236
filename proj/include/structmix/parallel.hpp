#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace structmix {

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
///
/// Work items are claimed from a shared counter, so callers must write
/// results into per-index slots; nothing about the output may depend on
/// which worker ran which index. Every item runs even if another one throws;
/// afterwards the exception of the lowest failing index is rethrown, which
/// keeps error reporting independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    if (count == 0) {
        return;
    }
    std::vector<std::exception_ptr> failures(count);
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, count);
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };

    if (workers == 1) {
        body();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) {
            pool.emplace_back(body);
        }
        body();
    }
    for (const auto& failure : failures) {
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
}

/// Worker count to use when the caller passes 0 ("auto").
inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) {
        return requested;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

}  // namespace structmix
