#pragma once

// One-sided put transport.
//
// A Node owns remotely writable Regions and answers control requests. An
// Endpoint is a sender's handle on one peer Node. Two endpoint kinds exist:
// ShmEndpoint writes straight into an in-process Node; TcpLink carries puts
// and control traffic over a socket to a remote agent thread that applies
// them.
//
// Ordering contract (default): the highest-addressed byte of a put becomes
// visible last. Waiters that observe it with acquire (or stronger) ordering
// see the whole put. With ordering disabled, puts are applied by a
// delivery agent in scrambled chunk order and only fence() restores order.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include "amrt/bytes.hpp"

namespace amrt::transport {

struct RegionInfo {
    std::uint32_t region_id = 0;
    std::uint64_t length = 0;
    std::uint32_t access_key = 0;

    friend bool operator==(const RegionInfo&, const RegionInfo&) = default;
};

// Spin-then-block helper tied to one region. Writers call notify() after
// making a byte visible; it only takes the lock when someone is blocked.
class WakeChannel {
public:
    void notify() noexcept;

    template <typename Pred>
    bool wait_until(Pred ready, std::chrono::steady_clock::time_point deadline) {
        waiters_.fetch_add(1, std::memory_order_seq_cst);
        bool ok;
        {
            std::unique_lock lk(mu_);
            ok = cv_.wait_until(lk, deadline, ready);
        }
        waiters_.fetch_sub(1, std::memory_order_seq_cst);
        return ok;
    }

    std::uint64_t notifications() const noexcept { return notifications_.load(std::memory_order_relaxed); }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::atomic<std::uint32_t> waiters_{0};
    std::atomic<std::uint64_t> notifications_{0};
};

class Region {
public:
    Region(std::uint32_t id, std::uint32_t key, std::size_t length);
    Region(const Region&) = delete;
    Region& operator=(const Region&) = delete;
    ~Region();

    RegionInfo info() const noexcept { return {id_, length_, key_}; }
    std::uint32_t id() const noexcept { return id_; }
    std::uint32_t key() const noexcept { return key_; }
    std::size_t length() const noexcept { return length_; }

    std::uint8_t* data() noexcept { return data_; }
    const std::uint8_t* data() const noexcept { return data_; }
    MutableByteView bytes() noexcept { return {data_, length_}; }

    std::uint8_t load(std::size_t offset) const noexcept {
        return std::atomic_ref<std::uint8_t>(data_[offset]).load(std::memory_order_seq_cst);
    }
    void store(std::size_t offset, std::uint8_t v) noexcept {
        std::atomic_ref<std::uint8_t>(data_[offset]).store(v, std::memory_order_seq_cst);
    }

    WakeChannel& wake() noexcept { return wake_; }

private:
    std::uint32_t id_;
    std::uint32_t key_;
    std::size_t length_;
    std::uint8_t* data_;
    WakeChannel wake_;
};

// Built-in control op answered by every Node (used as the TCP fence).
inline constexpr std::uint8_t kControlPing = 0x00;

struct ApplyOptions {
    // Nonzero: copy the body in random chunks with yields in between, to
    // give concurrent readers every chance to observe a torn write.
    std::uint64_t chaos_seed = 0;
};

class Node {
public:
    using ControlHandler = std::function<Bytes(ByteView body)>;

    explicit Node(std::string name = "node");
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    const std::string& name() const noexcept { return name_; }

    /// Allocates a zeroed region with a fresh id and random access key.
    RegionInfo register_region(std::size_t length, const std::string& tag = {});
    Region& region(std::uint32_t id);
    std::optional<RegionInfo> find_tagged(const std::string& tag) const;
    void unregister_region(std::uint32_t id);

    /// Target-side put: key and bounds enforced, then ordered write + wake.
    void apply_put(std::uint32_t id, std::uint32_t key, std::uint64_t offset, ByteView bytes,
                   const ApplyOptions& opts = {});

    void set_control_handler(std::uint8_t op, ControlHandler handler);
    /// Request is [op][body]; response is [status u16][body]. Never throws.
    Bytes handle_control(ByteView request) noexcept;

    std::uint64_t rejected_puts() const noexcept { return rejected_.load(std::memory_order_relaxed); }
    void count_rejected() noexcept { rejected_.fetch_add(1, std::memory_order_relaxed); }

private:
    std::string name_;
    mutable std::shared_mutex mu_;
    std::map<std::uint32_t, std::unique_ptr<Region>> regions_;
    std::map<std::string, std::uint32_t> tags_;
    std::uint32_t next_id_ = 1;
    std::map<std::uint8_t, ControlHandler> handlers_;
    std::atomic<std::uint64_t> rejected_{0};
};

/// Builds a control response.
Bytes control_ok(ByteView body = {});
Bytes control_error(Errc code, const std::string& detail);

class Endpoint {
public:
    virtual ~Endpoint() = default;

    virtual void put(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset, ByteView bytes) = 0;
    virtual void fence() = 0;
    /// Reliable request/response on the out-of-band channel. Returns the raw
    /// response ([status u16][body]).
    virtual Bytes control_rpc(ByteView request) = 0;
    virtual bool connected() const noexcept = 0;
    virtual void disconnect() = 0;

    /// Records a peer region advertisement.
    void learn_peer_region(const RegionInfo& info);
    std::optional<RegionInfo> peer_region(std::uint32_t id) const;

    /// control_rpc plus status check: throws Error(status, detail) on failure.
    Bytes call(std::uint8_t op, ByteView body = {});

protected:
    /// Throws BadKey / OutOfBounds if the put does not fit a learned region.
    void check_against_learned(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset,
                               std::size_t len) const;

private:
    mutable std::mutex peer_mu_;
    std::map<std::uint32_t, RegionInfo> peer_regions_;
};

struct ShmOptions {
    bool ordered = true;
    std::uint64_t chaos_seed = 0;
};

class ShmEndpoint final : public Endpoint {
public:
    ShmEndpoint(Node& target, ShmOptions opts = {});
    ~ShmEndpoint() override;

    void put(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset, ByteView bytes) override;
    void fence() override;
    Bytes control_rpc(ByteView request) override;
    bool connected() const noexcept override { return connected_.load(std::memory_order_acquire); }
    void disconnect() override;

    Node& target() noexcept { return target_; }

private:
    struct Pending;
    void agent_loop(std::stop_token st);

    Node& target_;
    ShmOptions opts_;
    std::atomic<bool> connected_{true};
    std::uint64_t chaos_counter_ = 0;
    std::mutex rpc_mu_;

    // weak-order delivery agent
    std::mutex q_mu_;
    std::condition_variable_any q_cv_;
    std::condition_variable drained_cv_;
    std::vector<Pending> queue_;
    bool agent_busy_ = false;
    std::jthread agent_;
};

/// "host:port" split. Throws InvalidArgument.
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);

// TCP wire: [len u32][type u8][body], len counts type + body.
namespace tcp {
inline constexpr std::uint8_t kPut = 0x01;
inline constexpr std::uint8_t kCtrl = 0x02;
inline constexpr std::uint8_t kCtrlReply = 0x03;
inline constexpr std::size_t kPutHeader = 4 + 4 + 8 + 4;
}  // namespace tcp

class TcpLink final : public Endpoint {
public:
    /// Takes ownership of a connected socket. Inbound puts and control
    /// requests are served against `local` by an internal agent thread.
    TcpLink(int fd, Node& local);
    ~TcpLink() override;

    void put(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset, ByteView bytes) override;
    void fence() override;
    Bytes control_rpc(ByteView request) override;
    bool connected() const noexcept override { return connected_.load(std::memory_order_acquire); }
    void disconnect() override;

private:
    void reader_loop();
    void send_message(std::uint8_t type, ByteView head, ByteView body);
    void fail_pending();

    int fd_;
    Node& local_;
    std::atomic<bool> connected_{true};
    std::mutex write_mu_;
    std::mutex rpc_mu_;  // one outstanding RPC per link
    std::mutex reply_mu_;
    std::condition_variable reply_cv_;
    std::optional<Bytes> reply_;
    bool awaiting_ = false;
    std::thread reader_;
};

std::unique_ptr<TcpLink> tcp_connect(const std::string& addr, Node& local);

class TcpListener {
public:
    explicit TcpListener(const std::string& addr);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const noexcept { return port_; }
    /// Waits up to `timeout` for a connection; nullptr on timeout.
    std::unique_ptr<TcpLink> accept(Node& local, std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

}  // namespace amrt::transport
