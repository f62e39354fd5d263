#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <new>

// Heap accounting for the benchmark gates. Counters live here; the global
// operator new/delete replacements are emitted by SRT_INSTALL_ALLOC_TRACKER()
// in exactly one translation unit of a program. Without it, installed() is
// false and every measurement reads zero.
namespace srt::bench {

struct AllocCounters {
    std::atomic<std::int64_t> current{0};
    std::atomic<std::int64_t> peak{0};
    std::atomic<bool> installed{false};
};

inline AllocCounters& alloc_counters() noexcept
{
    static AllocCounters counters;
    return counters;
}

inline void note_alloc(std::size_t n) noexcept
{
    auto& c = alloc_counters();
    const std::int64_t now = c.current.fetch_add(static_cast<std::int64_t>(n)) + static_cast<std::int64_t>(n);
    std::int64_t prev = c.peak.load();
    while (now > prev && !c.peak.compare_exchange_weak(prev, now)) {
    }
}

inline void note_free(std::size_t n) noexcept
{
    alloc_counters().current.fetch_sub(static_cast<std::int64_t>(n));
}

// Peak bytes allocated above the level current at construction.
class PeakScope {
public:
    PeakScope() noexcept : base_(alloc_counters().current.load()) { alloc_counters().peak.store(base_); }
    std::int64_t peak_transient() const noexcept { return alloc_counters().peak.load() - base_; }

private:
    std::int64_t base_;
};

inline bool tracker_installed() noexcept
{
    return alloc_counters().installed.load();
}

} // namespace srt::bench

#define SRT_INSTALL_ALLOC_TRACKER()                                                                    \
    namespace {                                                                                        \
    constexpr std::size_t kSrtAllocHeader = alignof(std::max_align_t);                                 \
    struct SrtAllocInstall {                                                                           \
        SrtAllocInstall() { srt::bench::alloc_counters().installed.store(true); }                      \
    } srt_alloc_install_;                                                                              \
    void* srt_tracked_alloc(std::size_t n)                                                             \
    {                                                                                                  \
        void* raw = std::malloc(n + kSrtAllocHeader);                                                  \
        if (!raw) throw std::bad_alloc();                                                              \
        *static_cast<std::size_t*>(raw) = n;                                                           \
        srt::bench::note_alloc(n);                                                                     \
        return static_cast<char*>(raw) + kSrtAllocHeader;                                              \
    }                                                                                                  \
    void srt_tracked_free(void* p) noexcept                                                            \
    {                                                                                                  \
        if (!p) return;                                                                                \
        void* raw = static_cast<char*>(p) - kSrtAllocHeader;                                           \
        srt::bench::note_free(*static_cast<std::size_t*>(raw));                                        \
        std::free(raw);                                                                                \
    }                                                                                                  \
    }                                                                                                  \
    void* operator new(std::size_t n) { return srt_tracked_alloc(n); }                                 \
    void* operator new[](std::size_t n) { return srt_tracked_alloc(n); }                               \
    void operator delete(void* p) noexcept { srt_tracked_free(p); }                                    \
    void operator delete[](void* p) noexcept { srt_tracked_free(p); }                                  \
    void operator delete(void* p, std::size_t) noexcept { srt_tracked_free(p); }                       \
    void operator delete[](void* p, std::size_t) noexcept { srt_tracked_free(p); }
