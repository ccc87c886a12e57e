#include "amrt/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <new>
#include <random>

namespace amrt::transport {

// ---------------------------------------------------------------------------
// WakeChannel / Region

void WakeChannel::notify() noexcept {
    notifications_.fetch_add(1, std::memory_order_relaxed);
    if (waiters_.load(std::memory_order_seq_cst) != 0) {
        // The empty critical section orders us after a waiter's predicate
        // check; notifying after unlock keeps the woken thread from
        // immediately blocking on the mutex we still hold.
        { std::lock_guard lk(mu_); }
        cv_.notify_all();
    }
}

Region::Region(std::uint32_t id, std::uint32_t key, std::size_t length)
    : id_(id), key_(key), length_(length),
      data_(static_cast<std::uint8_t*>(::operator new(length, std::align_val_t{64}))) {
    std::memset(data_, 0, length_);
}

Region::~Region() { ::operator delete(data_, std::align_val_t{64}); }

// ---------------------------------------------------------------------------
// Node

namespace {

std::uint32_t random_key() {
    static thread_local std::mt19937 rng{std::random_device{}()};
    std::uint32_t k;
    do {
        k = rng();
    } while (k == 0);
    return k;
}

void ordered_write(Region& r, std::uint64_t offset, ByteView bytes, const ApplyOptions& opts) {
    if (bytes.empty()) return;
    std::uint8_t* dst = r.data() + offset;
    const std::size_t body = bytes.size() - 1;
    if (opts.chaos_seed == 0) {
        std::memcpy(dst, bytes.data(), body);
    } else {
        std::mt19937_64 rng(opts.chaos_seed);
        std::size_t done = 0;
        while (done < body) {
            const std::size_t n = std::min<std::size_t>(body - done, 1 + rng() % 24);
            for (std::size_t i = 0; i < n; ++i) {
                std::atomic_ref<std::uint8_t>(dst[done + i]).store(bytes[done + i], std::memory_order_relaxed);
            }
            done += n;
            if (rng() % 3 == 0) std::this_thread::yield();
        }
    }
    // Last byte last; seq_cst pairs with WakeChannel's waiter count.
    r.store(offset + body, bytes[body]);
    r.wake().notify();
}

}  // namespace

Node::Node(std::string name) : name_(std::move(name)) {
    handlers_[kControlPing] = [](ByteView) { return Bytes{}; };
}

RegionInfo Node::register_region(std::size_t length, const std::string& tag) {
    if (length == 0) throw Error(Errc::InvalidArgument, "region length must be positive");
    std::unique_lock lk(mu_);
    const std::uint32_t id = next_id_++;
    auto region = std::make_unique<Region>(id, random_key(), length);
    const RegionInfo info = region->info();
    regions_.emplace(id, std::move(region));
    if (!tag.empty()) tags_[tag] = id;
    return info;
}

Region& Node::region(std::uint32_t id) {
    std::shared_lock lk(mu_);
    auto it = regions_.find(id);
    if (it == regions_.end()) throw Error(Errc::BadKey, "unknown region " + std::to_string(id));
    return *it->second;
}

std::optional<RegionInfo> Node::find_tagged(const std::string& tag) const {
    std::shared_lock lk(mu_);
    auto it = tags_.find(tag);
    if (it == tags_.end()) return std::nullopt;
    return regions_.at(it->second)->info();
}

void Node::unregister_region(std::uint32_t id) {
    std::unique_lock lk(mu_);
    regions_.erase(id);
    std::erase_if(tags_, [id](const auto& kv) { return kv.second == id; });
}

void Node::apply_put(std::uint32_t id, std::uint32_t key, std::uint64_t offset, ByteView bytes,
                     const ApplyOptions& opts) {
    Region* r = nullptr;
    {
        std::shared_lock lk(mu_);
        auto it = regions_.find(id);
        if (it != regions_.end()) r = it->second.get();
    }
    if (r == nullptr || r->key() != key) {
        count_rejected();
        throw Error(Errc::BadKey, "region " + std::to_string(id));
    }
    if (offset > r->length() || bytes.size() > r->length() - offset) {
        count_rejected();
        throw Error(Errc::OutOfBounds, "put exceeds region " + std::to_string(id));
    }
    ordered_write(*r, offset, bytes, opts);
}

void Node::set_control_handler(std::uint8_t op, ControlHandler handler) {
    std::unique_lock lk(mu_);
    if (!handler) {
        handlers_.erase(op);
        return;
    }
    handlers_[op] = std::move(handler);
}

Bytes control_ok(ByteView body) {
    ByteWriter w;
    w.put<std::uint16_t>(0);
    w.put_bytes(body);
    return w.take();
}

Bytes control_error(Errc code, const std::string& detail) {
    ByteWriter w;
    w.put<std::uint16_t>(static_cast<std::uint16_t>(code));
    w.put_bytes(as_bytes(detail));
    return w.take();
}

Bytes Node::handle_control(ByteView request) noexcept {
    try {
        if (request.empty()) return control_error(Errc::MalformedControlMessage, "empty request");
        ControlHandler h;
        {
            std::shared_lock lk(mu_);
            auto it = handlers_.find(request[0]);
            if (it == handlers_.end()) {
                return control_error(Errc::MalformedControlMessage, "unknown op " + std::to_string(request[0]));
            }
            h = it->second;
        }
        return control_ok(h(request.subspan(1)));
    } catch (const Error& e) {
        return control_error(e.code(), e.detail());
    } catch (const std::exception& e) {
        return control_error(Errc::MalformedControlMessage, e.what());
    }
}

// ---------------------------------------------------------------------------
// Endpoint

void Endpoint::learn_peer_region(const RegionInfo& info) {
    std::lock_guard lk(peer_mu_);
    peer_regions_[info.region_id] = info;
}

std::optional<RegionInfo> Endpoint::peer_region(std::uint32_t id) const {
    std::lock_guard lk(peer_mu_);
    auto it = peer_regions_.find(id);
    if (it == peer_regions_.end()) return std::nullopt;
    return it->second;
}

void Endpoint::check_against_learned(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset,
                                     std::size_t len) const {
    const auto info = peer_region(region_id);
    if (!info || info->access_key != key) throw Error(Errc::BadKey, "region " + std::to_string(region_id));
    if (offset > info->length || len > info->length - offset) {
        throw Error(Errc::OutOfBounds, "put exceeds region " + std::to_string(region_id));
    }
}

Bytes Endpoint::call(std::uint8_t op, ByteView body) {
    Bytes req;
    req.reserve(body.size() + 1);
    req.push_back(op);
    req.insert(req.end(), body.begin(), body.end());
    Bytes resp = control_rpc(req);
    if (resp.size() < 2) throw Error(Errc::MalformedControlMessage, "short reply");
    const auto status = static_cast<Errc>(load_le<std::uint16_t>(resp.data()));
    if (status != Errc::Ok) {
        throw Error(status, std::string(resp.begin() + 2, resp.end()));
    }
    return Bytes(resp.begin() + 2, resp.end());
}

// ---------------------------------------------------------------------------
// ShmEndpoint

struct ShmEndpoint::Pending {
    Region* region;
    std::uint64_t offset;
    Bytes bytes;
    std::vector<std::pair<std::size_t, std::size_t>> chunks;  // unapplied (begin, len)
};

ShmEndpoint::ShmEndpoint(Node& target, ShmOptions opts) : target_(target), opts_(opts) {
    if (!opts_.ordered) {
        agent_ = std::jthread([this](std::stop_token st) { agent_loop(st); });
    }
}

ShmEndpoint::~ShmEndpoint() {
    if (agent_.joinable()) {
        agent_.request_stop();
        q_cv_.notify_all();
    }
}

void ShmEndpoint::disconnect() { connected_.store(false, std::memory_order_release); }

void ShmEndpoint::put(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset, ByteView bytes) {
    if (!connected()) throw Error(Errc::PeerDisconnected);
    if (bytes.empty()) {
        // Still enforce the key so a zero-length probe cannot discover regions.
        Region& r = target_.region(region_id);
        if (r.key() != key) throw Error(Errc::BadKey);
        return;
    }
    if (opts_.ordered) {
        ApplyOptions ao;
        if (opts_.chaos_seed != 0) ao.chaos_seed = opts_.chaos_seed + ++chaos_counter_;
        target_.apply_put(region_id, key, offset, bytes, ao);
        return;
    }
    Region& r = target_.region(region_id);
    if (r.key() != key) {
        target_.count_rejected();
        throw Error(Errc::BadKey);
    }
    if (offset > r.length() || bytes.size() > r.length() - offset) {
        target_.count_rejected();
        throw Error(Errc::OutOfBounds);
    }
    Pending p{&r, offset, Bytes(bytes.begin(), bytes.end()), {}};
    for (std::size_t at = 0; at < p.bytes.size(); at += 16) {
        p.chunks.emplace_back(at, std::min<std::size_t>(16, p.bytes.size() - at));
    }
    {
        std::lock_guard lk(q_mu_);
        queue_.push_back(std::move(p));
    }
    q_cv_.notify_all();
}

void ShmEndpoint::agent_loop(std::stop_token st) {
    std::mt19937_64 rng(opts_.chaos_seed != 0 ? opts_.chaos_seed : std::random_device{}());
    std::unique_lock lk(q_mu_);
    while (!st.stop_requested()) {
        if (!q_cv_.wait(lk, st, [this] { return !queue_.empty(); })) break;
        agent_busy_ = true;
        // Pick any outstanding chunk of any outstanding put: no ordering.
        auto& p = queue_[rng() % queue_.size()];
        const std::size_t ci = rng() % p.chunks.size();
        const auto [begin, len] = p.chunks[ci];
        p.chunks.erase(p.chunks.begin() + static_cast<std::ptrdiff_t>(ci));
        Region* region = p.region;
        std::uint8_t* dst = region->data() + p.offset + begin;
        for (std::size_t i = 0; i < len; ++i) {
            std::atomic_ref<std::uint8_t>(dst[i]).store(p.bytes[begin + i], std::memory_order_seq_cst);
        }
        if (p.chunks.empty()) {
            queue_.erase(queue_.begin() + (&p - queue_.data()));
        }
        const bool drained = queue_.empty();
        agent_busy_ = !drained;
        lk.unlock();
        region->wake().notify();
        if (drained) drained_cv_.notify_all();
        std::this_thread::yield();
        lk.lock();
    }
}

void ShmEndpoint::fence() {
    if (!connected()) throw Error(Errc::PeerDisconnected);
    if (opts_.ordered) return;
    std::unique_lock lk(q_mu_);
    drained_cv_.wait(lk, [this] { return queue_.empty() && !agent_busy_; });
}

Bytes ShmEndpoint::control_rpc(ByteView request) {
    std::lock_guard lk(rpc_mu_);
    if (!connected()) throw Error(Errc::PeerDisconnected);
    Bytes resp = target_.handle_control(request);
    if (!connected()) throw Error(Errc::PeerDisconnected, "during control request");
    return resp;
}

// ---------------------------------------------------------------------------
// TCP

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "address must be host:port");
    std::string host = addr.substr(0, colon);
    const std::string port_s = addr.substr(colon + 1);
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(port_s, &used);
        if (used != port_s.size()) throw std::invalid_argument("port");
    } catch (const std::exception&) {
        throw Error(Errc::InvalidArgument, "bad port '" + port_s + "'");
    }
    if (port > 65535) throw Error(Errc::InvalidArgument, "port out of range");
    if (host.empty()) host = "0.0.0.0";
    return {host, static_cast<std::uint16_t>(port)};
}

namespace {

bool read_exact(int fd, void* buf, std::size_t n) {
    auto* p = static_cast<std::uint8_t*>(buf);
    while (n > 0) {
        const ssize_t got = ::recv(fd, p, n, 0);
        if (got == 0) return false;
        if (got < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += got;
        n -= static_cast<std::size_t>(got);
    }
    return true;
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
        throw Error(Errc::IoError, "cannot resolve " + host);
    }
    sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return sa;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpLink::TcpLink(int fd, Node& local) : fd_(fd), local_(local) {
    set_nodelay(fd_);
    reader_ = std::thread([this] { reader_loop(); });
}

TcpLink::~TcpLink() {
    disconnect();
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
}

void TcpLink::disconnect() {
    if (connected_.exchange(false, std::memory_order_acq_rel)) {
        ::shutdown(fd_, SHUT_RDWR);
    }
    fail_pending();
}

void TcpLink::fail_pending() {
    std::lock_guard lk(reply_mu_);
    reply_cv_.notify_all();
}

void TcpLink::send_message(std::uint8_t type, ByteView head, ByteView body) {
    std::uint8_t prefix[5];
    store_le<std::uint32_t>(prefix, static_cast<std::uint32_t>(1 + head.size() + body.size()));
    prefix[4] = type;
    iovec iov[3] = {
        {prefix, sizeof(prefix)},
        {const_cast<std::uint8_t*>(head.data()), head.size()},
        {const_cast<std::uint8_t*>(body.data()), body.size()},
    };
    std::size_t total = sizeof(prefix) + head.size() + body.size();
    std::lock_guard lk(write_mu_);
    if (!connected()) throw Error(Errc::PeerDisconnected);
    int idx = 0;
    while (total > 0) {
        msghdr msg{};
        msg.msg_iov = iov + idx;
        msg.msg_iovlen = static_cast<std::size_t>(3 - idx);
        const ssize_t sent = ::sendmsg(fd_, &msg, MSG_NOSIGNAL);
        if (sent < 0) {
            if (errno == EINTR) continue;
            connected_.store(false, std::memory_order_release);
            throw Error(Errc::PeerDisconnected, std::strerror(errno));
        }
        total -= static_cast<std::size_t>(sent);
        std::size_t left = static_cast<std::size_t>(sent);
        while (idx < 3 && left >= iov[idx].iov_len) {
            left -= iov[idx].iov_len;
            ++idx;
        }
        if (idx < 3) {
            iov[idx].iov_base = static_cast<std::uint8_t*>(iov[idx].iov_base) + left;
            iov[idx].iov_len -= left;
        }
    }
}

void TcpLink::put(std::uint32_t region_id, std::uint32_t key, std::uint64_t offset, ByteView bytes) {
    if (!connected()) throw Error(Errc::PeerDisconnected);
    check_against_learned(region_id, key, offset, bytes.size());
    if (bytes.empty()) return;
    std::uint8_t head[tcp::kPutHeader];
    store_le<std::uint32_t>(head, region_id);
    store_le<std::uint32_t>(head + 4, key);
    store_le<std::uint64_t>(head + 8, offset);
    store_le<std::uint32_t>(head + 16, static_cast<std::uint32_t>(bytes.size()));
    send_message(tcp::kPut, ByteView(head, sizeof(head)), bytes);
}

void TcpLink::fence() {
    // The agent applies messages in stream order, so a round trip drains
    // everything sent before it.
    const std::uint8_t ping = kControlPing;
    call(ping);
}

Bytes TcpLink::control_rpc(ByteView request) {
    std::lock_guard rpc(rpc_mu_);
    {
        std::lock_guard lk(reply_mu_);
        reply_.reset();
        awaiting_ = true;
    }
    send_message(tcp::kCtrl, {}, request);
    std::unique_lock lk(reply_mu_);
    reply_cv_.wait(lk, [this] { return reply_.has_value() || !connected(); });
    awaiting_ = false;
    if (!reply_) throw Error(Errc::PeerDisconnected, "during control request");
    Bytes out = std::move(*reply_);
    reply_.reset();
    return out;
}

void TcpLink::reader_loop() {
    Bytes buf;
    while (connected()) {
        std::uint8_t prefix[5];
        if (!read_exact(fd_, prefix, sizeof(prefix))) break;
        const std::uint32_t len = load_le<std::uint32_t>(prefix);
        if (len == 0) break;
        buf.resize(len - 1);
        if (!buf.empty() && !read_exact(fd_, buf.data(), buf.size())) break;
        const std::uint8_t type = prefix[4];
        if (type == tcp::kPut) {
            if (buf.size() < tcp::kPutHeader) break;
            const auto region = load_le<std::uint32_t>(buf.data());
            const auto key = load_le<std::uint32_t>(buf.data() + 4);
            const auto offset = load_le<std::uint64_t>(buf.data() + 8);
            const auto n = load_le<std::uint32_t>(buf.data() + 16);
            if (n != buf.size() - tcp::kPutHeader) break;
            try {
                local_.apply_put(region, key, offset, ByteView(buf).subspan(tcp::kPutHeader));
            } catch (const Error&) {
                // Rejected puts are dropped; the node counts them.
            }
        } else if (type == tcp::kCtrl) {
            Bytes resp = local_.handle_control(buf);
            try {
                send_message(tcp::kCtrlReply, {}, resp);
            } catch (const Error&) {
                break;
            }
        } else if (type == tcp::kCtrlReply) {
            std::lock_guard lk(reply_mu_);
            if (awaiting_) reply_ = buf;
            reply_cv_.notify_all();
        } else {
            break;
        }
    }
    connected_.store(false, std::memory_order_release);
    fail_pending();
}

std::unique_ptr<TcpLink> tcp_connect(const std::string& addr, Node& local) {
    auto [host, port] = parse_address(addr);
    const sockaddr_in sa = resolve(host == "0.0.0.0" ? "127.0.0.1" : host, port);
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw Error(Errc::IoError, std::strerror(errno));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
        const int err = errno;
        ::close(fd);
        throw Error(Errc::PeerDisconnected, "connect " + addr + ": " + std::strerror(err));
    }
    return std::make_unique<TcpLink>(fd, local);
}

TcpListener::TcpListener(const std::string& addr) {
    auto [host, port] = parse_address(addr);
    const sockaddr_in sa = resolve(host, port);
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw Error(Errc::IoError, std::strerror(errno));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(fd_, 8) != 0) {
        const int err = errno;
        ::close(fd_);
        throw Error(Errc::IoError, "listen " + addr + ": " + std::strerror(err));
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpLink> TcpListener::accept(Node& local, std::chrono::milliseconds timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) return nullptr;
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) return nullptr;
    return std::make_unique<TcpLink>(fd, local);
}

}  // namespace amrt::transport
