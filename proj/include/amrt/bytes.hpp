#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amrt/error.hpp"

namespace amrt {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using MutableByteView = std::span<std::uint8_t>;

inline ByteView as_bytes(std::string_view s) noexcept {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

template <typename T>
inline void store_le(std::uint8_t* dst, T value) noexcept {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        dst[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i));
    }
}

template <typename T>
inline T load_le(const std::uint8_t* src) noexcept {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(src[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

/// 64-bit FNV-1a over the bytes of a symbol name.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Append-only little-endian writer used by the package and control codecs.
class ByteWriter {
public:
    template <typename T>
    void put(T value) {
        const std::size_t at = out_.size();
        out_.resize(at + sizeof(T));
        store_le<T>(out_.data() + at, value);
    }
    void put_bytes(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
    // u16 length prefix, then UTF-8 bytes.
    void put_string(std::string_view s) {
        if (s.size() > 0xFFFF) throw Error(Errc::InvalidArgument, "string longer than 65535 bytes");
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        put_bytes(as_bytes(s));
    }
    Bytes take() { return std::move(out_); }
    std::size_t size() const noexcept { return out_.size(); }

private:
    Bytes out_;
};

// Bounds-checked reader; any overrun throws Error(on_truncate).
class ByteReader {
public:
    ByteReader(ByteView in, Errc on_truncate) : in_(in), on_truncate_(on_truncate) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v = load_le<T>(in_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }
    ByteView get_bytes(std::size_t n) {
        need(n);
        ByteView v = in_.subspan(pos_, n);
        pos_ += n;
        return v;
    }
    std::string get_string() {
        auto n = get<std::uint16_t>();
        auto b = get_bytes(n);
        return std::string(reinterpret_cast<const char*>(b.data()), b.size());
    }
    std::size_t remaining() const noexcept { return in_.size() - pos_; }
    void set_error(Errc e) noexcept { on_truncate_ = e; }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw Error(on_truncate_, "truncated input");
    }

    ByteView in_;
    std::size_t pos_ = 0;
    Errc on_truncate_;
};

}  // namespace amrt
