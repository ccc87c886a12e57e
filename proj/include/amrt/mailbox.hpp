#pragma once

// Reactive mailboxes. A receiver region is M banks of N fixed-size slots;
// slot (b, s) starts at (b*N + s) * frame_size. A slot holds a message once
// its signal byte reads 0x5A. The sender keeps one credit byte per bank in
// its own memory: 1 means the bank is open, 0 means it is in flight. The
// receiver writes 1 back with a one-sided put after draining the bank.

#include <chrono>
#include <cstdint>
#include <utility>

#include "amrt/transport.hpp"
#include "amrt/wire.hpp"

namespace amrt::mailbox {

struct MailboxGeometry {
    std::uint32_t banks = 4;
    std::uint32_t slots_per_bank = 16;
    std::uint32_t frame_size = 64;

    void validate() const;
    std::size_t region_size() const noexcept {
        return static_cast<std::size_t>(banks) * slots_per_bank * frame_size;
    }
    std::size_t slot_offset(std::uint32_t bank, std::uint32_t slot) const noexcept {
        return (static_cast<std::size_t>(bank) * slots_per_bank + slot) * frame_size;
    }
    /// Where message number k goes: bank (k / N) mod M, slot k mod N.
    std::pair<std::uint32_t, std::uint32_t> placement(std::uint64_t k) const noexcept {
        return {static_cast<std::uint32_t>((k / slots_per_bank) % banks),
                static_cast<std::uint32_t>(k % slots_per_bank)};
    }
};

enum class WaitKind { spin, hybrid };

struct WaitStrategy {
    WaitKind kind = WaitKind::spin;
    std::uint32_t spin_iterations = 1000;  // hybrid only: polls before blocking
};

const char* wait_kind_name(WaitKind k) noexcept;
WaitKind parse_wait_kind(const std::string& s);

// Accumulated cost of waiting. busy_ns is monotonic time spent polling;
// time blocked on a wake event is not counted.
struct WaitStats {
    std::uint64_t busy_ns = 0;
    std::uint64_t sleeps = 0;
    std::uint64_t waits = 0;

    WaitStats& operator+=(const WaitStats& o) noexcept {
        busy_ns += o.busy_ns;
        sleeps += o.sleeps;
        waits += o.waits;
        return *this;
    }
};

enum class WaitResult { signaled, timed_out };

/// Waits until region[offset] == expected or the timeout passes.
WaitResult wait_signal(transport::Region& region, std::size_t offset, std::uint8_t expected,
                       const WaitStrategy& strategy, std::chrono::nanoseconds timeout,
                       WaitStats* stats = nullptr);

/// Byte offset of the signal byte of the frame currently in the slot. In
/// variable mode this reads the header, so it needs header MAG present.
std::size_t fixed_signal_offset(const MailboxGeometry& g, std::uint32_t bank, std::uint32_t slot) noexcept;

/// Waits for a complete frame in a slot. Fixed mode watches the terminal
/// byte. Variable mode waits on the header MAG, reads the length, then
/// waits on that frame's signal byte.
WaitResult wait_frame(transport::Region& region, const MailboxGeometry& g, wire::FrameMode mode,
                      std::uint32_t bank, std::uint32_t slot, const WaitStrategy& strategy,
                      std::chrono::nanoseconds timeout, WaitStats* stats = nullptr);

/// Copies the signaled frame out of a slot and clears its signal state so
/// the slot can be reused. Throws NotSignaled.
Bytes consume_slot(transport::Region& region, const MailboxGeometry& g, wire::FrameMode mode,
                   std::uint32_t bank, std::uint32_t slot);

// Sender-side credit flags, one byte per bank, all initially open.
class CreditState {
public:
    CreditState(transport::Node& local, std::uint32_t banks);
    CreditState(const CreditState&) = delete;
    CreditState& operator=(const CreditState&) = delete;

    const transport::RegionInfo& info() const noexcept { return info_; }
    std::uint32_t banks() const noexcept { return banks_; }
    bool is_open(std::uint32_t bank) const;

    /// Waits for the bank's flag to read 1, then takes it (1 -> 0).
    /// Throws Timeout if the receiver never releases it.
    void acquire(std::uint32_t bank, const WaitStrategy& strategy, std::chrono::nanoseconds timeout,
                 WaitStats* stats = nullptr);

private:
    transport::Region& region_;
    transport::RegionInfo info_;
    std::uint32_t banks_;
};

/// Receiver side: reopens a bank by writing 1 into the sender's flag cell.
void release_bank(transport::Endpoint& ep, const transport::RegionInfo& credit_region, std::uint32_t bank);

}  // namespace amrt::mailbox
