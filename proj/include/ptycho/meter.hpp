#pragma once

#include <atomic>
#include <cstdint>

namespace ptycho {

// Process-wide accounting of bytes held alive by differentiation tapes
// (saved intermediates plus adjoint buffers). The optimizer logs `live` per
// iteration; benchmarks compare `peak` across configurations.
class MemoryMeter {
public:
    static std::int64_t live() { return live_().load(std::memory_order_relaxed); }
    static std::int64_t peak() { return peak_().load(std::memory_order_relaxed); }

    static void add(std::int64_t bytes) {
        const std::int64_t now = live_().fetch_add(bytes, std::memory_order_relaxed) + bytes;
        auto& p = peak_();
        std::int64_t prev = p.load(std::memory_order_relaxed);
        while (prev < now && !p.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
        }
    }
    static void sub(std::int64_t bytes) { live_().fetch_sub(bytes, std::memory_order_relaxed); }
    static void reset_peak() { peak_().store(live(), std::memory_order_relaxed); }

private:
    static std::atomic<std::int64_t>& live_() {
        static std::atomic<std::int64_t> v{0};
        return v;
    }
    static std::atomic<std::int64_t>& peak_() {
        static std::atomic<std::int64_t> v{0};
        return v;
    }
};

} // namespace ptycho
