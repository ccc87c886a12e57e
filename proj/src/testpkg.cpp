#include "amrt/testpkg.hpp"

#include <bit>
#include <cstring>

namespace amrt::testpkg {

IptState::IptState(std::size_t capacity, std::size_t slot_size)
    : keys_(capacity), offsets_(capacity), occupied_(capacity), heap_(capacity * slot_size), slot_size_(slot_size) {
    if (capacity == 0 || !std::has_single_bit(capacity)) {
        throw Error(Errc::InvalidArgument, "ipt capacity must be a power of two");
    }
    if (slot_size == 0) throw Error(Errc::InvalidArgument, "ipt slot size must be positive");
    shift_ = 64 - static_cast<unsigned>(std::countr_zero(capacity));
}

std::size_t IptState::home_slot(std::uint64_t key) const noexcept {
    if (shift_ == 64) return 0;
    return static_cast<std::size_t>((key * kHashMultiplier) >> shift_);
}

std::optional<std::uint64_t> IptState::hash_put(std::uint64_t key) {
    const std::size_t cap = capacity();
    std::size_t slot = home_slot(key);
    for (std::size_t probe = 0; probe < cap; ++probe, slot = (slot + 1) & (cap - 1)) {
        if (occupied_[slot] && keys_[slot] == key) return offsets_[slot];
        if (!occupied_[slot]) {
            occupied_[slot] = 1;
            keys_[slot] = key;
            offsets_[slot] = static_cast<std::uint64_t>(slot) * slot_size_;
            ++occupancy_;
            return offsets_[slot];
        }
    }
    return std::nullopt;
}

std::optional<std::uint64_t> IptState::offset_of(std::uint64_t key) const {
    const std::size_t cap = capacity();
    std::size_t slot = home_slot(key);
    for (std::size_t probe = 0; probe < cap; ++probe, slot = (slot + 1) & (cap - 1)) {
        if (!occupied_[slot]) return std::nullopt;
        if (keys_[slot] == key) return offsets_[slot];
    }
    return std::nullopt;
}

bool IptState::copy(std::uint64_t offset, ByteView src) {
    if (src.size() > slot_size_ || offset > heap_.size() || src.size() > heap_.size() - offset) return false;
    if (!src.empty()) std::memcpy(heap_.data() + offset, src.data(), src.size());
    return true;
}

picvm::ExternResult ext_ssum_store(SsumState& st, const picvm::ExternCall& call) {
    return picvm::ExternResult::ok(st.store(call.argv[0]));
}

picvm::ExternResult ext_ipt_hash_put(IptState& st, const picvm::ExternCall& call) {
    const auto off = st.hash_put(call.argv[0]);
    if (!off) return picvm::ExternResult::fail(kErrTableFull);
    return picvm::ExternResult::ok(*off);
}

picvm::ExternResult ext_ipt_copy(IptState& st, const picvm::ExternCall& call) {
    const std::uint64_t offset = call.argv[0];
    const std::uint64_t from = call.argv[1];
    const std::uint64_t len = call.argv[2];
    if (from > call.payload.size() || len > call.payload.size() - from) {
        return picvm::ExternResult::fail(kErrOutOfBounds);
    }
    if (!st.copy(offset, call.payload.subspan(from, len))) return picvm::ExternResult::fail(kErrOutOfBounds);
    return picvm::ExternResult::ok(0);
}

linkpkg::Ried make_test_ried(SsumState& ssum, IptState& ipt) {
    linkpkg::Ried r;
    r.name = "test";
    r.symbols.emplace_back("ssum_store", [&ssum](const picvm::ExternCall& c) { return ext_ssum_store(ssum, c); });
    r.symbols.emplace_back("ipt_hash_put", [&ipt](const picvm::ExternCall& c) { return ext_ipt_hash_put(ipt, c); });
    r.symbols.emplace_back("ipt_copy", [&ipt](const picvm::ExternCall& c) { return ext_ipt_copy(ipt, c); });
    return r;
}

TestHost::TestHost(std::size_t ipt_capacity, std::size_t ipt_slot) : ipt(ipt_capacity, ipt_slot) {
    linkpkg::install_ried(symbols, make_test_ried(ssum, ipt));
}

std::vector<linkpkg::SourceFile> test_sources() {
    return {{"jam_ipt.amc", ipt_source()}, {"jam_ssum.amc", ssum_source()}};
}

linkpkg::BuiltPackage build_test_package() { return linkpkg::build_package("test", test_sources()); }

Bytes make_args(std::uint64_t key, std::uint64_t seq) {
    Bytes a(16);
    store_le<std::uint64_t>(a.data(), key);
    store_le<std::uint64_t>(a.data() + 8, seq);
    return a;
}

std::uint64_t args_key(ByteView args) { return args.size() >= 8 ? load_le<std::uint64_t>(args.data()) : 0; }

std::optional<std::uint64_t> args_seq(ByteView args) {
    if (args.size() < 16) return std::nullopt;
    return load_le<std::uint64_t>(args.data() + 8);
}

Bytes make_payload(const std::vector<std::uint32_t>& values) {
    Bytes p(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) store_le<std::uint32_t>(p.data() + 4 * i, values[i]);
    return p;
}

std::uint64_t native_ssum(ByteView payload) {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i + 4 <= payload.size(); i += 4) sum += load_le<std::uint32_t>(payload.data() + i);
    return sum;
}

bool IptOracle::put(std::uint64_t key, ByteView payload, std::size_t slot_size) {
    if (!arrays_.contains(key) && arrays_.size() >= capacity_) return false;
    std::size_t len = payload.size() & ~std::size_t{3};
    if (len > slot_size) len = slot_size;
    Bytes& dst = arrays_[key];
    // Shorter writes leave the tail of an earlier, longer array in place.
    if (dst.size() < len) dst.resize(len);
    std::memcpy(dst.data(), payload.data(), len);
    return true;
}

}  // namespace amrt::testpkg
