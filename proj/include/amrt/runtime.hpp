#pragma once

// Send and receive paths for both invocation methods.
//
// Injected: the frame carries bytecode plus an indirection table, patched
// either by the sender (receiver handles learned in a handshake) or by the
// receiver on arrival (FNV-1a name hashes). Local: the frame carries only an
// element ID and the receiver runs its loaded copy of the same package.

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>

#include "amrt/linkpkg.hpp"
#include "amrt/mailbox.hpp"
#include "amrt/picvm.hpp"
#include "amrt/transport.hpp"
#include "amrt/wire.hpp"

namespace amrt::runtime {

inline constexpr std::uint8_t kControlGetMailbox = 0x20;
inline constexpr std::uint8_t kControlAdvertise = 0x21;

struct ExecOptions {
    bool read_only_payload = false;
    // Refuse sender-supplied handles; only receiver-patched frames run.
    bool require_receiver_patch = false;
    std::uint64_t fuel = picvm::kDefaultFuel;
};

struct Outcome {
    Errc error = Errc::Ok;
    std::string detail;
    std::uint64_t result = 0;
    picvm::ExitStatus status;

    bool ok() const noexcept { return error == Errc::Ok; }
};

// Runs decoded messages against a local symbol table and package.
class Executor {
public:
    Executor(const linkpkg::SymbolTable& symbols, ExecOptions opts = {});

    /// Builds the ID-indexed dispatch vector for local invocation.
    void load_package(const linkpkg::Package& pkg);
    bool has_package() const noexcept { return !dispatch_.empty(); }

    /// Executes in place: receiver-patch entries are rewritten to handles.
    Outcome execute(wire::MessageParts& parts);

    const ExecOptions& options() const noexcept { return opts_; }

private:
    struct LocalEntry {
        picvm::CodeObject code;
        std::vector<std::string> extern_names;
        linkpkg::IndirectionTable table;
        std::uint64_t generation = ~0ULL;
    };

    Outcome run(const picvm::CodeObject& code, std::span<const std::uint64_t> table, wire::MessageParts& parts);

    const linkpkg::SymbolTable& symbols_;
    ExecOptions opts_;
    std::vector<LocalEntry> dispatch_;
    std::unique_ptr<picvm::ExecContext> ctx_;
};

/// Error frames carry [errc u16][detail] as payload under kErrorFrameId.
wire::MessageParts make_error_parts(Errc code, const std::string& detail, std::size_t max_payload);
std::pair<Errc, std::string> parse_error_parts(const wire::MessageParts& parts);

enum class PongKind { echo_execute, noop };

struct ServerConfig {
    mailbox::MailboxGeometry geometry;
    wire::FrameMode frame_mode = wire::FrameMode::fixed;
    mailbox::WaitStrategy wait;
    ExecOptions exec;
    PongKind pong = PongKind::echo_execute;
    // Use data put + fence + signal put toward the peer (weakly ordered fabrics).
    bool fenced_puts = false;
    std::chrono::milliseconds idle_timeout{20};
};

struct ServerStats {
    std::uint64_t received = 0;
    std::uint64_t executed = 0;
    std::uint64_t errors = 0;
    std::uint64_t pongs = 0;
    std::uint64_t banks_released = 0;
    mailbox::WaitStats wait;
    std::string last_error;
};

// Receiver: owns the mailbox region and serves it on one thread.
class AmServer {
public:
    using Observer = std::function<void(const wire::MessageParts&, std::uint32_t bank, std::uint32_t slot,
                                        const Outcome&)>;

    AmServer(transport::Node& node, linkpkg::SymbolTable& symbols, ServerConfig cfg);
    ~AmServer();
    AmServer(const AmServer&) = delete;
    AmServer& operator=(const AmServer&) = delete;

    /// Endpoint back to the initiator (credit releases and pongs).
    void set_peer(transport::Endpoint* peer);
    void load_package(const linkpkg::Package& pkg);
    /// Called on the serve thread after every consumed frame.
    void set_observer(Observer obs);

    const transport::RegionInfo& mailbox_region() const noexcept { return mailbox_; }
    const ServerConfig& config() const noexcept { return cfg_; }

    /// Serves until stop is requested.
    void serve_loop(std::stop_token stop);
    /// Waits up to `timeout` for the next expected slot and processes it.
    bool poll_once(std::chrono::nanoseconds timeout);

    ServerStats stats() const;

private:
    void respond(wire::MessageParts& parts, const Outcome& outcome);
    void record_error(const std::string& what);

    transport::Node& node_;
    linkpkg::SymbolTable& symbols_;
    ServerConfig cfg_;
    Executor exec_;
    transport::RegionInfo mailbox_;
    transport::Region* region_ = nullptr;
    std::uint64_t next_ = 0;
    Observer observer_;

    mutable std::mutex mu_;
    transport::Endpoint* peer_ = nullptr;
    std::optional<transport::RegionInfo> credit_region_;
    std::optional<transport::RegionInfo> pong_region_;
    ServerStats stats_;
    Bytes pong_buf_;
};

struct ClientConfig {
    linkpkg::PatchMode patch = linkpkg::PatchMode::sender;
    mailbox::WaitStrategy wait;
    ExecOptions exec;
    bool fenced_puts = false;
    std::chrono::milliseconds timeout{10000};
};

struct MailboxAdvert {
    transport::RegionInfo region;
    mailbox::MailboxGeometry geometry;
    wire::FrameMode mode = wire::FrameMode::fixed;
};

struct Pong {
    wire::MessageParts parts;
    Outcome outcome;  // of executing the pong locally (echo-execute)
};

// Initiator: sends frames into a peer's mailbox under credit flow control.
class AmClient {
public:
    AmClient(transport::Node& local, transport::Endpoint& ep, linkpkg::SymbolTable& symbols, ClientConfig cfg = {});
    AmClient(const AmClient&) = delete;
    AmClient& operator=(const AmClient&) = delete;

    /// Learns the peer mailbox and advertises credit flags and pong slot.
    void connect();
    /// Link handshake for every extern of every element (one batched RPC).
    void handshake(const linkpkg::Package& pkg);
    void handshake(const std::vector<std::string>& names);
    void load_package(const linkpkg::Package& pkg) { exec_.load_package(pkg); }

    void send_injected(const linkpkg::Element& element, ByteView args, ByteView payload, bool respond = false);
    void send_local(std::uint16_t element_id, ByteView args, ByteView payload, bool respond = false);
    /// Sends a pre-built message (header counts must match).
    void send_parts(wire::MessageParts& parts);

    /// Waits for the pong and executes it locally unless it is a noop.
    /// Error frames are rethrown as Error.
    Pong wait_pong();

    const MailboxAdvert& peer_mailbox() const noexcept { return advert_; }
    std::uint64_t sent() const noexcept { return sent_; }
    const mailbox::WaitStats& wait_stats() const noexcept { return wait_stats_; }
    linkpkg::PeerLinkCache& link_cache() noexcept { return cache_; }

private:
    wire::MessageParts build_injected(const linkpkg::Element& element, ByteView args, ByteView payload, bool respond);

    transport::Node& local_;
    transport::Endpoint& ep_;
    linkpkg::SymbolTable& symbols_;
    ClientConfig cfg_;
    Executor exec_;
    linkpkg::PeerLinkCache cache_;
    MailboxAdvert advert_;
    std::unique_ptr<mailbox::CreditState> credits_;
    transport::RegionInfo pong_info_;
    transport::Region* pong_ = nullptr;
    std::uint64_t sent_ = 0;
    mailbox::WaitStats wait_stats_;
    Bytes frame_buf_;
};

}  // namespace amrt::runtime
