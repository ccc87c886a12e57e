#pragma once

// Jam toolchain and remote linker.
//
// A jam is one source file of bytecode assembly (`jam_<name>.amc`). Its
// `.extern` directives name receiver symbols; the declaration order is the
// order of the indirection table every message carrying the jam ships with.
// Packages bundle jams with dense element IDs. Receivers publish symbols in
// a SymbolTable (a ried is a named bundle of registrations), and senders
// learn the receiver's handles with a control-channel handshake before
// injecting code.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "amrt/picvm.hpp"
#include "amrt/transport.hpp"

namespace amrt::linkpkg {

// ---------------------------------------------------------------------------
// Assembly

struct JamFragment {
    Bytes code;
    std::vector<std::string> extern_names;
};

/// Assembles jam source. The result always passes picvm::validate.
///
///   .extern NAME                     declare indirection slot (first-seen order)
///   label:                           branch target
///   LDI r1, -4                       immediates: decimal or 0x hex
///   ADD r0, r1, r2
///   LD4 r3, payload[r4+8]            regions: args, payload, scratch
///   ST8 r3, scratch[r0]              value register first
///   BLTU r1, r2, loop                branch targets: label or relative count
///   CALLX r0, ssum_store             extern by name
///
/// Comments start with ';' or '#'.
JamFragment assemble_jam(std::string_view source);

// ---------------------------------------------------------------------------
// Packages

struct Element {
    std::uint16_t element_id = 0;
    std::string name;
    std::vector<std::string> extern_names;
    Bytes code;
};

struct Package {
    std::string name;
    std::vector<Element> elements;  // index == element_id

    const Element* find(std::uint16_t id) const noexcept;
    const Element* find(std::string_view name) const noexcept;
};

struct SourceFile {
    std::string filename;
    std::string text;
};

struct BuiltPackage {
    Package package;
    Bytes bytes;
    std::string manifest;
};

inline constexpr char kPackageMagic[4] = {'2', 'C', 'P', 'K'};
inline constexpr std::uint16_t kPackageVersion = 1;

/// "jam_ssum.amc" -> "ssum". Throws InvalidArgument for other names.
std::string element_name_from_filename(const std::string& filename);

/// IDs are assigned 0..n-1 in sorted element-name order.
BuiltPackage build_package(const std::string& name, const std::vector<SourceFile>& sources);
Bytes serialize_package(const Package& pkg);
std::string manifest_text(const Package& pkg);
/// Parses and revalidates every element.
Package load_package(ByteView bytes);

/// Reads every jam_*.amc in a directory (non-recursive).
std::vector<SourceFile> read_jam_sources(const std::string& dir);

// ---------------------------------------------------------------------------
// Symbols

class SymbolTable final : public picvm::ExternResolver {
public:
    /// Returns a fresh nonzero handle. Re-registering a name retires the old
    /// handle. Throws HashCollision if a different name shares the FNV-1a hash.
    std::uint64_t register_symbol(const std::string& name, picvm::HostFn fn);

    std::optional<std::uint64_t> lookup(const std::string& name) const;
    std::optional<std::uint64_t> lookup_hash(std::uint64_t hash) const;
    std::optional<std::string> name_of(std::uint64_t handle) const;
    std::optional<picvm::ExternResult> invoke(std::uint64_t handle, const picvm::ExternCall& call) const override;

    /// Incremented by every registration.
    std::uint64_t generation() const noexcept;
    std::size_t size() const;

private:
    struct Entry {
        std::string name;
        std::shared_ptr<const picvm::HostFn> fn;
    };
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, std::uint64_t> by_name_;
    std::unordered_map<std::uint64_t, Entry> by_handle_;
    std::unordered_map<std::uint64_t, std::string> by_hash_;
    std::uint64_t next_handle_ = 1;
    std::uint64_t generation_ = 0;
};

// A ried: the set of symbols a process installs to define what injected
// code may call on it.
struct Ried {
    std::string name;
    std::vector<std::pair<std::string, picvm::HostFn>> symbols;
};

std::vector<std::uint64_t> install_ried(SymbolTable& table, const Ried& ried);

// ---------------------------------------------------------------------------
// Link handshake and indirection patching

inline constexpr std::uint8_t kControlResolve = 0x10;

/// Serves resolve requests against `table` on `node`'s control channel.
void install_resolve_handler(transport::Node& node, const SymbolTable& table);

/// Asks the peer for handles of `names`. All-or-nothing: throws
/// UnresolvedSymbol(name) if any is missing.
std::vector<std::uint64_t> resolve_symbols(transport::Endpoint& ep, const std::vector<std::string>& names);

// Sender-side cache of one peer's handles.
class PeerLinkCache {
public:
    std::optional<std::uint64_t> get(const std::string& name) const;
    void set(const std::string& name, std::uint64_t handle) { handles_[name] = handle; }
    void clear() { handles_.clear(); }
    /// Resolves every name not yet cached in one batched request.
    void resolve_missing(transport::Endpoint& ep, const std::vector<std::string>& names);

private:
    std::map<std::string, std::uint64_t> handles_;
};

enum class PatchMode { sender, receiver };

using IndirectionTable = std::vector<std::uint64_t>;

/// Sender-patch: cached peer handles in extern order (UnresolvedSymbol if
/// any is missing). Receiver-patch: FNV-1a-64 of each name.
IndirectionTable patch_got(const std::vector<std::string>& extern_names, const PeerLinkCache* cache, PatchMode mode);

/// Receiver side of receiver-patch mode: replaces name hashes with local
/// handles in place. Throws UnknownSymbolHash.
void apply_receiver_patch(std::span<std::uint64_t> entries, const SymbolTable& table);

/// Resolves a name list against a local table (local-function dispatch).
IndirectionTable resolve_local(const std::vector<std::string>& extern_names, const SymbolTable& table);

}  // namespace amrt::linkpkg
