#include "amrt/mailbox.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif

namespace amrt::mailbox {

namespace {

using Clock = std::chrono::steady_clock;

inline void cpu_relax() noexcept {
#if defined(__x86_64__) || defined(__i386__)
    _mm_pause();
#elif defined(__aarch64__)
    asm volatile("yield" ::: "memory");
#endif
}

std::uint64_t ns_between(Clock::time_point a, Clock::time_point b) noexcept {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
}

}  // namespace

void MailboxGeometry::validate() const {
    if (banks == 0 || slots_per_bank == 0) throw Error(Errc::InvalidArgument, "banks and slots must be >= 1");
    if (banks > 256 || slots_per_bank > 256) throw Error(Errc::InvalidArgument, "banks and slots must be <= 256");
    wire::validate_config({frame_size, wire::FrameMode::fixed});
}

const char* wait_kind_name(WaitKind k) noexcept { return k == WaitKind::spin ? "spin" : "hybrid"; }

WaitKind parse_wait_kind(const std::string& s) {
    if (s == "spin") return WaitKind::spin;
    if (s == "hybrid") return WaitKind::hybrid;
    throw Error(Errc::InvalidArgument, "wait strategy must be spin or hybrid");
}

WaitResult wait_signal(transport::Region& region, std::size_t offset, std::uint8_t expected,
                       const WaitStrategy& strategy, std::chrono::nanoseconds timeout, WaitStats* stats) {
    if (offset >= region.length()) throw Error(Errc::OutOfBounds, "watched byte outside region");
    if (stats) ++stats->waits;
    if (region.load(offset) == expected) return WaitResult::signaled;

    const auto start = Clock::now();
    const auto deadline = start + timeout;
    const bool hybrid = strategy.kind == WaitKind::hybrid;
    auto finish = [&](WaitResult r, Clock::time_point poll_start) {
        if (stats) stats->busy_ns += ns_between(poll_start, Clock::now());
        return r;
    };

    // Polling phase. Periodic yields keep a poller from starving the writer
    // when both share a core.
    for (std::uint64_t i = 1;; ++i) {
        if (region.load(offset) == expected) return finish(WaitResult::signaled, start);
        if (hybrid && i >= strategy.spin_iterations) break;
        if ((i & 15) == 0) {
            std::this_thread::yield();
            if ((i & 255) == 0 && Clock::now() >= deadline) return finish(WaitResult::timed_out, start);
        } else {
            cpu_relax();
        }
    }
    if (stats) stats->busy_ns += ns_between(start, Clock::now());

    // Blocking phase: sleep on the region's wake event.
    if (stats) ++stats->sleeps;
    const bool ok = region.wake().wait_until([&] { return region.load(offset) == expected; }, deadline);
    return ok ? WaitResult::signaled : WaitResult::timed_out;
}

std::size_t fixed_signal_offset(const MailboxGeometry& g, std::uint32_t bank, std::uint32_t slot) noexcept {
    return g.slot_offset(bank, slot) + g.frame_size - 1;
}

namespace {

// Frame length announced by a (possibly still arriving) header, clamped to
// the slot. Zero if the header is not plausible yet.
std::size_t announced_length(transport::Region& region, std::size_t base, std::uint32_t slot_size) {
    std::uint8_t hdr[wire::kHeaderSize];
    for (std::size_t i = 0; i < wire::kHeaderSize; ++i) hdr[i] = region.load(base + i);
    const auto h = wire::read_header(hdr);
    try {
        const std::size_t len = wire::frame_size(h);
        return len <= slot_size ? len : 0;
    } catch (const Error&) {
        return 0;
    }
}

}  // namespace

WaitResult wait_frame(transport::Region& region, const MailboxGeometry& g, wire::FrameMode mode,
                      std::uint32_t bank, std::uint32_t slot, const WaitStrategy& strategy,
                      std::chrono::nanoseconds timeout, WaitStats* stats) {
    if (mode == wire::FrameMode::fixed) {
        return wait_signal(region, fixed_signal_offset(g, bank, slot), wire::kSigMag, strategy, timeout, stats);
    }
    const auto deadline = Clock::now() + timeout;
    const std::size_t base = g.slot_offset(bank, slot);
    if (wait_signal(region, base + wire::kHeaderMagOffset, wire::kHeaderMag, strategy, timeout, stats) ==
        WaitResult::timed_out) {
        return WaitResult::timed_out;
    }
    // Header bytes may still be landing; re-read until the announced
    // length's signal byte is set.
    while (true) {
        const std::size_t len = announced_length(region, base, g.frame_size);
        if (len != 0 && region.load(base + len - 1) == wire::kSigMag) return WaitResult::signaled;
        const auto now = Clock::now();
        if (now >= deadline) return WaitResult::timed_out;
        const auto slice = std::min<std::chrono::nanoseconds>(deadline - now, std::chrono::microseconds(200));
        if (len != 0) {
            wait_signal(region, base + len - 1, wire::kSigMag, strategy, slice, stats);
        } else {
            std::this_thread::yield();
        }
    }
}

Bytes consume_slot(transport::Region& region, const MailboxGeometry& g, wire::FrameMode mode,
                   std::uint32_t bank, std::uint32_t slot) {
    if (bank >= g.banks || slot >= g.slots_per_bank) throw Error(Errc::OutOfBounds, "slot outside geometry");
    const std::size_t base = g.slot_offset(bank, slot);
    if (mode == wire::FrameMode::fixed) {
        const std::size_t sig = base + g.frame_size - 1;
        if (region.load(sig) != wire::kSigMag) throw Error(Errc::NotSignaled);
        Bytes out(region.data() + base, region.data() + base + g.frame_size);
        region.store(sig, 0);
        return out;
    }
    if (region.load(base + wire::kHeaderMagOffset) != wire::kHeaderMag) throw Error(Errc::NotSignaled);
    const std::size_t len = announced_length(region, base, g.frame_size);
    if (len == 0 || region.load(base + len - 1) != wire::kSigMag) throw Error(Errc::NotSignaled);
    Bytes out(region.data() + base, region.data() + base + len);
    // A shorter frame later must not find stale signal bytes in old payload.
    std::memset(region.data() + base, 0, len - 1);
    region.store(base + len - 1, 0);
    return out;
}

CreditState::CreditState(transport::Node& local, std::uint32_t banks)
    : region_(local.region(local.register_region(banks).region_id)), info_(region_.info()), banks_(banks) {
    for (std::uint32_t b = 0; b < banks; ++b) region_.store(b, 1);
}

bool CreditState::is_open(std::uint32_t bank) const { return region_.load(bank) == 1; }

void CreditState::acquire(std::uint32_t bank, const WaitStrategy& strategy, std::chrono::nanoseconds timeout,
                          WaitStats* stats) {
    if (bank >= banks_) throw Error(Errc::OutOfBounds, "bank");
    if (wait_signal(region_, bank, 1, strategy, timeout, stats) == WaitResult::timed_out) {
        throw Error(Errc::Timeout, "credit for bank " + std::to_string(bank));
    }
    std::uint8_t open = 1;
    std::atomic_ref<std::uint8_t>(region_.data()[bank]).compare_exchange_strong(open, 0, std::memory_order_acq_rel);
}

void release_bank(transport::Endpoint& ep, const transport::RegionInfo& credit_region, std::uint32_t bank) {
    const std::uint8_t one = 1;
    ep.put(credit_region.region_id, credit_region.access_key, bank, ByteView(&one, 1));
}

}  // namespace amrt::mailbox
