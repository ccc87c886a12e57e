#include "amrt/wire.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace amrt::wire {

void MessageParts::sync_header() {
    header.got_count = static_cast<std::uint16_t>(got_entries.size());
    header.code_len = static_cast<std::uint32_t>(code.size());
    header.args_len = static_cast<std::uint32_t>(args.size());
    header.payload_len = static_cast<std::uint32_t>(payload.size());
}

std::uint32_t frame_size(std::uint64_t got_count, std::uint64_t code_len, std::uint64_t args_len,
                         std::uint64_t payload_len) {
    constexpr std::uint64_t kMax = std::numeric_limits<std::uint32_t>::max();
    if (got_count > 0xFFFF || code_len > kMax || args_len > kMax || payload_len > kMax) {
        throw Error(Errc::SizeOverflow, "field exceeds header range");
    }
    const std::uint64_t raw = kHeaderSize + kGotEntrySize * got_count + code_len + args_len + payload_len + 1;
    const std::uint64_t rounded = (raw + kLine - 1) / kLine * kLine;
    if (rounded > kMax) throw Error(Errc::SizeOverflow, std::to_string(rounded) + " bytes");
    return static_cast<std::uint32_t>(rounded);
}

std::uint32_t frame_size(const MessageParts& parts) {
    return frame_size(parts.got_entries.size(), parts.code.size(), parts.args.size(), parts.payload.size());
}

std::uint32_t frame_size(const FrameHeader& h) {
    return frame_size(h.got_count, h.code_len, h.args_len, h.payload_len);
}

void validate_config(const FrameConfig& cfg) {
    if (cfg.frame_size < kLine || cfg.frame_size % kLine != 0) {
        throw Error(Errc::InvalidArgument, "frame size must be a positive multiple of 64");
    }
}

void write_header(const FrameHeader& h, std::uint8_t* dst) noexcept {
    store_le<std::uint16_t>(dst + 0, h.magic);
    dst[2] = h.version;
    dst[3] = h.flags;
    store_le<std::uint16_t>(dst + 4, h.element_id);
    store_le<std::uint16_t>(dst + 6, h.got_count);
    store_le<std::uint32_t>(dst + 8, h.code_len);
    store_le<std::uint32_t>(dst + 12, h.args_len);
    store_le<std::uint32_t>(dst + 16, h.payload_len);
    dst[20] = h.bank;
    dst[21] = h.slot;
    dst[22] = h.reserved;
    dst[23] = h.header_mag;
}

FrameHeader read_header(const std::uint8_t* src) noexcept {
    FrameHeader h;
    h.magic = load_le<std::uint16_t>(src + 0);
    h.version = src[2];
    h.flags = src[3];
    h.element_id = load_le<std::uint16_t>(src + 4);
    h.got_count = load_le<std::uint16_t>(src + 6);
    h.code_len = load_le<std::uint32_t>(src + 8);
    h.args_len = load_le<std::uint32_t>(src + 12);
    h.payload_len = load_le<std::uint32_t>(src + 16);
    h.bank = src[20];
    h.slot = src[21];
    h.reserved = src[22];
    h.header_mag = src[23];
    return h;
}

void check_header(const FrameHeader& h) {
    if (h.magic != kMagic || h.header_mag != kHeaderMag) throw Error(Errc::BadMagic, "header");
    if (h.version != kVersion) throw Error(Errc::BadVersion, std::to_string(h.version));
    if (!h.injected() && (h.got_count != 0 || h.code_len != 0)) {
        throw Error(Errc::InjectedFlagViolation, "code or indirection without INJECTED");
    }
}

void encode_frame_into(const MessageParts& parts, MutableByteView out) {
    const FrameHeader& h = parts.header;
    if (h.got_count != parts.got_entries.size() || h.code_len != parts.code.size() ||
        h.args_len != parts.args.size() || h.payload_len != parts.payload.size()) {
        throw Error(Errc::EncodeError, "header counts disagree with part lengths");
    }
    if (h.magic != kMagic || h.header_mag != kHeaderMag || h.version != kVersion) {
        throw Error(Errc::EncodeError, "header constants altered");
    }
    if (!h.injected() && (h.got_count != 0 || h.code_len != 0)) {
        throw Error(Errc::EncodeError, "code or indirection without INJECTED");
    }
    const std::uint32_t need = frame_size(parts);
    if (out.size() < need || out.size() % kLine != 0) {
        throw Error(Errc::FrameTooLarge, std::to_string(need) + " > " + std::to_string(out.size()));
    }

    std::uint8_t* p = out.data();
    write_header(h, p);
    p += kHeaderSize;
    for (std::uint64_t e : parts.got_entries) {
        store_le<std::uint64_t>(p, e);
        p += kGotEntrySize;
    }
    auto append = [&p](const Bytes& b) {
        if (!b.empty()) std::memcpy(p, b.data(), b.size());
        p += b.size();
    };
    append(parts.code);
    append(parts.args);
    append(parts.payload);
    std::fill(p, out.data() + out.size() - 1, std::uint8_t{0});
    out[out.size() - 1] = kSigMag;
}

Bytes encode_frame(const MessageParts& parts, const FrameConfig& cfg) {
    validate_config(cfg);
    const std::uint32_t need = frame_size(parts);
    std::uint32_t len = need;
    if (cfg.mode == FrameMode::fixed) {
        if (need > cfg.frame_size) {
            throw Error(Errc::FrameTooLarge,
                        std::to_string(need) + " > " + std::to_string(cfg.frame_size));
        }
        len = cfg.frame_size;
    }
    Bytes out(len);
    encode_frame_into(parts, out);
    return out;
}

MessageParts decode_frame(ByteView bytes, const FrameConfig& cfg) {
    if (bytes.size() < kLine) throw Error(Errc::LengthMismatch, "shorter than one line");
    if (cfg.mode == FrameMode::fixed && bytes.size() != cfg.frame_size) {
        throw Error(Errc::LengthMismatch, "frame is not the configured size");
    }
    if (bytes.back() != kSigMag) throw Error(Errc::BadMagic, "signal");

    MessageParts parts;
    parts.header = read_header(bytes.data());
    const FrameHeader& h = parts.header;
    check_header(h);

    const std::uint32_t need = frame_size(h);
    if (need > bytes.size()) throw Error(Errc::LengthMismatch, "declared lengths exceed frame");
    if (cfg.mode == FrameMode::variable && need != bytes.size()) {
        throw Error(Errc::LengthMismatch, "variable frame size disagrees with header");
    }

    const std::uint8_t* p = bytes.data() + kHeaderSize;
    parts.got_entries.resize(h.got_count);
    for (auto& e : parts.got_entries) {
        e = load_le<std::uint64_t>(p);
        p += kGotEntrySize;
    }
    auto take = [&p](Bytes& dst, std::uint32_t n) {
        dst.assign(p, p + n);
        p += n;
    };
    take(parts.code, h.code_len);
    take(parts.args, h.args_len);
    take(parts.payload, h.payload_len);
    return parts;
}

}  // namespace amrt::wire
