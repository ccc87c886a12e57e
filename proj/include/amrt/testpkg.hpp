#pragma once

// The benchmark active messages: ServerSideSum ("ssum") and IndirectPut
// ("ipt"). Holds the receiver state they act on, the externs that make up
// the test ried, and plain C++ reference versions used as oracles.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amrt/linkpkg.hpp"

namespace amrt::testpkg {

inline constexpr std::uint32_t kErrTableFull = 1;
inline constexpr std::uint32_t kErrOutOfBounds = 2;
inline constexpr std::size_t kDefaultCapacity = 4096;
inline constexpr std::size_t kDefaultSlotSize = 4096;
inline constexpr std::uint64_t kHashMultiplier = 0x9E3779B97F4A7C15ULL;

struct SsumState {
    std::vector<std::uint64_t> results;

    std::uint64_t cursor() const noexcept { return results.size(); }
    /// Stores at the cursor and returns the index used.
    std::uint64_t store(std::uint64_t value) {
        results.push_back(value);
        return results.size() - 1;
    }

    friend bool operator==(const SsumState&, const SsumState&) = default;
};

// Open-addressing index from client keys to heap offsets, plus the heap.
class IptState {
public:
    explicit IptState(std::size_t capacity = kDefaultCapacity, std::size_t slot_size = kDefaultSlotSize);

    std::size_t capacity() const noexcept { return keys_.size(); }
    std::size_t slot_size() const noexcept { return slot_size_; }
    std::size_t occupancy() const noexcept { return occupancy_; }

    /// Multiplicative hash: top log2(capacity) bits of key * 0x9E3779B97F4A7C15.
    std::size_t home_slot(std::uint64_t key) const noexcept;

    /// Finds the key's slot (or claims the first free one probing linearly)
    /// and returns slot * slot_size. nullopt when the table is full.
    std::optional<std::uint64_t> hash_put(std::uint64_t key);
    std::optional<std::uint64_t> offset_of(std::uint64_t key) const;

    /// heap[offset, offset+len) = src. False if out of bounds or len > slot.
    bool copy(std::uint64_t offset, ByteView src);

    ByteView heap() const noexcept { return heap_; }

    friend bool operator==(const IptState&, const IptState&) = default;

private:
    std::vector<std::uint64_t> keys_;
    std::vector<std::uint64_t> offsets_;
    std::vector<std::uint8_t> occupied_;
    Bytes heap_;
    std::size_t slot_size_;
    unsigned shift_;
    std::size_t occupancy_ = 0;
};

picvm::ExternResult ext_ssum_store(SsumState& st, const picvm::ExternCall& call);
picvm::ExternResult ext_ipt_hash_put(IptState& st, const picvm::ExternCall& call);
/// argv: heap offset, payload offset, length.
picvm::ExternResult ext_ipt_copy(IptState& st, const picvm::ExternCall& call);

/// The test ried: ssum_store, ipt_hash_put, ipt_copy bound to the states.
linkpkg::Ried make_test_ried(SsumState& ssum, IptState& ipt);

// Receiver state for one process, with its symbols installed.
struct TestHost {
    explicit TestHost(std::size_t ipt_capacity = kDefaultCapacity, std::size_t ipt_slot = kDefaultSlotSize);
    TestHost(const TestHost&) = delete;
    TestHost& operator=(const TestHost&) = delete;

    SsumState ssum;
    IptState ipt;
    linkpkg::SymbolTable symbols;
};

/// Shipped jam sources (compiled into the library from packages/test).
const std::string& ssum_source();
const std::string& ipt_source();
std::vector<linkpkg::SourceFile> test_sources();
linkpkg::BuiltPackage build_test_package();

/// Args layout used by the benchmark messages: key, then a sequence stamp.
Bytes make_args(std::uint64_t key, std::uint64_t seq);
std::uint64_t args_key(ByteView args);
std::optional<std::uint64_t> args_seq(ByteView args);

/// Payload of `count` little-endian 32-bit values.
Bytes make_payload(const std::vector<std::uint32_t>& values);

// --- native references ---

/// Sum of whole 32-bit words with 64-bit wrapping.
std::uint64_t native_ssum(ByteView payload);

// Map-of-arrays model of IndirectPut: last array written per key.
class IptOracle {
public:
    explicit IptOracle(std::size_t capacity) : capacity_(capacity) {}
    /// Mirrors the jam: false (and no change) when a new key does not fit.
    bool put(std::uint64_t key, ByteView payload, std::size_t slot_size);
    const std::map<std::uint64_t, Bytes>& arrays() const noexcept { return arrays_; }

private:
    std::size_t capacity_;
    std::map<std::uint64_t, Bytes> arrays_;
};

}  // namespace amrt::testpkg
