#pragma once

// Active-message frame layout. All fields little-endian.
//
//   offset  size  field
//        0     2  magic        0x2C41
//        2     1  version      1
//        3     1  flags        bit0 INJECTED, bit1 RESPOND, bit2 RECEIVER_PATCH
//        4     2  element_id
//        6     2  got_count    indirection entries (8 bytes each)
//        8     4  code_len
//       12     4  args_len
//       16     4  payload_len
//       20     1  bank
//       21     1  slot
//       22     1  reserved     0
//       23     1  header_mag   0xA5
//       24     .  indirection table, code, args, payload, zero padding
//    end-1     1  signal byte  0x5A
//
// A frame is always a positive multiple of 64 bytes.

#include <cstdint>
#include <vector>

#include "amrt/bytes.hpp"

namespace amrt::wire {

inline constexpr std::uint16_t kMagic = 0x2C41;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kHeaderMag = 0xA5;
inline constexpr std::uint8_t kSigMag = 0x5A;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kHeaderMagOffset = 23;
inline constexpr std::size_t kLine = 64;
inline constexpr std::size_t kGotEntrySize = 8;

namespace flags {
inline constexpr std::uint8_t kInjected = 1u << 0;
inline constexpr std::uint8_t kRespond = 1u << 1;
inline constexpr std::uint8_t kReceiverPatch = 1u << 2;
}  // namespace flags

// Reserved element IDs for runtime-generated frames.
inline constexpr std::uint16_t kNoopPongId = 0xFFFF;
inline constexpr std::uint16_t kErrorFrameId = 0xFFFE;

struct FrameHeader {
    std::uint16_t magic = kMagic;
    std::uint8_t version = kVersion;
    std::uint8_t flags = 0;
    std::uint16_t element_id = 0;
    std::uint16_t got_count = 0;
    std::uint32_t code_len = 0;
    std::uint32_t args_len = 0;
    std::uint32_t payload_len = 0;
    std::uint8_t bank = 0;
    std::uint8_t slot = 0;
    std::uint8_t reserved = 0;
    std::uint8_t header_mag = kHeaderMag;

    bool injected() const noexcept { return (flags & flags::kInjected) != 0; }
    bool respond() const noexcept { return (flags & flags::kRespond) != 0; }
    bool receiver_patch() const noexcept { return (flags & flags::kReceiverPatch) != 0; }

    friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct MessageParts {
    FrameHeader header;
    std::vector<std::uint64_t> got_entries;
    Bytes code;
    Bytes args;
    Bytes payload;

    // Copies the list lengths into the header counts.
    void sync_header();

    friend bool operator==(const MessageParts&, const MessageParts&) = default;
};

enum class FrameMode { fixed, variable };

struct FrameConfig {
    std::uint32_t frame_size = 64;
    FrameMode mode = FrameMode::fixed;
};

/// Bytes needed for a message, rounded up to whole 64-byte lines. Includes
/// the trailing signal byte. Throws SizeOverflow past 32 bits.
std::uint32_t frame_size(std::uint64_t got_count, std::uint64_t code_len, std::uint64_t args_len,
                         std::uint64_t payload_len);
std::uint32_t frame_size(const MessageParts& parts);
std::uint32_t frame_size(const FrameHeader& header);

void validate_config(const FrameConfig& cfg);

void write_header(const FrameHeader& h, std::uint8_t* dst) noexcept;
FrameHeader read_header(const std::uint8_t* src) noexcept;

/// Checks magics, version and flag/length consistency of a header.
void check_header(const FrameHeader& h);

Bytes encode_frame(const MessageParts& parts, const FrameConfig& cfg);
/// Encodes into a caller buffer of exactly the output length (zeroing padding).
void encode_frame_into(const MessageParts& parts, MutableByteView out);

MessageParts decode_frame(ByteView bytes, const FrameConfig& cfg);

}  // namespace amrt::wire
