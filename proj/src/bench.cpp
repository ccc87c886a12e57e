#include "amrt/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "amrt/runtime.hpp"
#include "amrt/testpkg.hpp"

namespace amrt::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t ns_since(Clock::time_point t0, Clock::time_point t1) {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) return value;
    }
    throw Error(Errc::InvalidArgument, std::string("unknown ") + what + " '" + s + "'");
}

const std::pair<const char*, Shape> kShapes[] = {{"pingpong", Shape::pingpong}, {"rate", Shape::rate}};
const std::pair<const char*, Func> kFuncs[] = {{"ssum", Func::ssum}, {"ipt", Func::ipt}};
const std::pair<const char*, Mode> kModes[] = {{"injected", Mode::injected}, {"local", Mode::local}};
const std::pair<const char*, TransportKind> kTransports[] = {{"shm", TransportKind::shm},
                                                             {"tcp", TransportKind::tcp}};

const linkpkg::Element& element_for(const linkpkg::Package& pkg, Func f) {
    const auto* e = pkg.find(func_name(f));
    if (!e) throw Error(Errc::UnknownElementId, std::string("package lacks ") + func_name(f));
    return *e;
}

// Both ends of one benchmark connection. With a remote peer only the
// initiator half exists.
class Harness {
public:
    Harness(const BenchConfig& cfg, const linkpkg::Package& pkg, std::uint32_t frame_size)
        : client_node_("initiator"), server_node_("target") {
        runtime::ClientConfig ccfg;
        ccfg.patch = cfg.patch;
        ccfg.wait = cfg.wait;
        ccfg.timeout = std::chrono::milliseconds(60000);

        if (!cfg.peer.empty()) {
            if (cfg.transport != TransportKind::tcp) {
                throw Error(Errc::InvalidArgument, "a remote peer needs --transport tcp");
            }
            link_ = transport::tcp_connect(cfg.peer, client_node_);
            to_server_ = link_.get();
        } else {
            runtime::ServerConfig scfg;
            scfg.geometry = {cfg.banks, cfg.slots, frame_size};
            scfg.wait = cfg.wait;
            server_ = std::make_unique<runtime::AmServer>(server_node_, server_host_.symbols, scfg);
            server_->load_package(pkg);
            if (cfg.transport == TransportKind::shm) {
                shm_to_server_ = std::make_unique<transport::ShmEndpoint>(server_node_);
                shm_to_client_ = std::make_unique<transport::ShmEndpoint>(client_node_);
                to_server_ = shm_to_server_.get();
                server_->set_peer(shm_to_client_.get());
            } else {
                transport::TcpListener listener("127.0.0.1:0");
                std::unique_ptr<transport::TcpLink> accepted;
                std::thread acceptor(
                    [&] { accepted = listener.accept(server_node_, std::chrono::milliseconds(10000)); });
                link_ = transport::tcp_connect("127.0.0.1:" + std::to_string(listener.port()), client_node_);
                acceptor.join();
                if (!accepted) throw Error(Errc::PeerDisconnected, "loopback accept timed out");
                server_link_ = std::move(accepted);
                to_server_ = link_.get();
                server_->set_peer(server_link_.get());
            }
            server_->set_observer([this](const wire::MessageParts& p, std::uint32_t, std::uint32_t,
                                         const runtime::Outcome&) {
                if (auto seq = testpkg::args_seq(p.args)) seen_.push_back(*seq);
            });
        }
        client_ = std::make_unique<runtime::AmClient>(client_node_, *to_server_, client_host_.symbols, ccfg);
        client_->connect();
        client_->load_package(pkg);
        if (cfg.mode == Mode::injected && cfg.patch == linkpkg::PatchMode::sender) client_->handshake(pkg);
        if (server_) {
            thread_ = std::jthread([this](std::stop_token st) { server_->serve_loop(st); });
        }
    }

    ~Harness() {
        if (thread_.joinable()) {
            thread_.request_stop();
            thread_.join();
        }
        // Links go before the server so no control request reaches a dead handler.
        client_.reset();
        if (link_) link_->disconnect();
        if (server_link_) server_link_->disconnect();
    }

    runtime::AmClient& client() { return *client_; }
    runtime::AmServer* server() { return server_.get(); }
    // Only safe to read once the server is quiescent (after the final pong).
    const std::vector<std::uint64_t>& seen() const { return seen_; }

    std::uint64_t server_busy_ns() const { return server_ ? server_->stats().wait.busy_ns : 0; }
    std::uint64_t server_errors() const { return server_ ? server_->stats().errors : 0; }

private:
    transport::Node client_node_;
    transport::Node server_node_;
    testpkg::TestHost client_host_;
    testpkg::TestHost server_host_;
    std::unique_ptr<runtime::AmServer> server_;
    std::unique_ptr<transport::ShmEndpoint> shm_to_server_;
    std::unique_ptr<transport::ShmEndpoint> shm_to_client_;
    std::unique_ptr<transport::TcpLink> link_;
    std::unique_ptr<transport::TcpLink> server_link_;
    transport::Endpoint* to_server_ = nullptr;
    std::unique_ptr<runtime::AmClient> client_;
    std::vector<std::uint64_t> seen_;
    std::jthread thread_;
};

struct Workload {
    const linkpkg::Element* element;
    Mode mode;
    Bytes payload;
    std::mt19937_64 rng;

    void send(runtime::AmClient& c, std::uint64_t seq, bool respond) {
        // Keys repeat so IndirectPut exercises both claim and overwrite paths.
        const Bytes args = testpkg::make_args(rng() % 256, seq);
        if (mode == Mode::injected) {
            c.send_injected(*element, args, payload, respond);
        } else {
            c.send_local(element->element_id, args, payload, respond);
        }
    }
};

Workload make_workload(const BenchConfig& cfg, const linkpkg::Package& pkg, std::size_t payload) {
    Workload w{&element_for(pkg, cfg.func), cfg.mode, Bytes(payload), std::mt19937_64(cfg.seed ^ payload)};
    for (auto& b : w.payload) b = static_cast<std::uint8_t>(w.rng());
    return w;
}

std::uint32_t frame_for(const BenchConfig& cfg, const linkpkg::Package& pkg, std::size_t payload) {
    const std::uint32_t need = required_frame_size(pkg, cfg.func, cfg.mode, payload);
    return std::max(need, cfg.frame_size);
}

BenchRow make_row(const BenchConfig& cfg, std::size_t payload, std::uint32_t frame_size) {
    return BenchRow{cfg.shape, cfg.func,  cfg.mode,  payload,    cfg.wait.kind,
                    cfg.transport, cfg.banks, cfg.slots, frame_size, cfg.iters, {}};
}

void emit(std::ostream* csv, const BenchRow& row) {
    if (!csv) return;
    write_csv_row(*csv, row);
    csv->flush();
}

BenchRow pingpong_one(const BenchConfig& cfg, const linkpkg::Package& pkg, std::size_t payload) {
    const std::uint32_t fs = frame_for(cfg, pkg, payload);
    Harness h(cfg, pkg, fs);
    auto& client = h.client();
    Workload w = make_workload(cfg, pkg, payload);
    BenchRow row = make_row(cfg, payload, client.peer_mailbox().geometry.frame_size);

    std::uint64_t errors = 0;
    auto one = [&](std::uint64_t seq) {
        w.send(client, seq, true);
        try {
            if (!client.wait_pong().outcome.ok()) ++errors;
        } catch (const Error& e) {
            if (e.code() == Errc::Timeout || e.code() == Errc::PeerDisconnected) throw;
            ++errors;
        }
    };
    for (std::uint64_t i = 0; i < cfg.warmup; ++i) one(i);

    const auto busy0 = client.wait_stats().busy_ns + h.server_busy_ns();
    const auto err0 = h.server_errors();
    errors = 0;
    std::vector<double> samples;
    samples.reserve(cfg.iters);
    std::uint64_t measured_ns = 0;
    for (std::uint64_t i = 0; i < cfg.iters; ++i) {
        if (cfg.interval.count() > 0) std::this_thread::sleep_for(cfg.interval);
        const auto t0 = Clock::now();
        one(cfg.warmup + i);
        const auto t1 = Clock::now();
        const auto rtt = ns_since(t0, t1);
        measured_ns += rtt;
        samples.push_back(static_cast<double>(rtt) / 2.0);
    }
    row.stats = summarize(std::move(samples));
    row.stats.wall_time_ns = measured_ns;
    row.stats.messages_per_sec = measured_ns ? static_cast<double>(cfg.iters) * 1e9 / measured_ns : 0;
    row.stats.busy_wait_time_ns = client.wait_stats().busy_ns + h.server_busy_ns() - busy0;
    // Server-side failures also come back as error pongs; count each once.
    row.stats.errors = std::max(errors, h.server_errors() - err0);
    return row;
}

BenchRow rate_one(const BenchConfig& cfg, const linkpkg::Package& pkg, std::size_t payload) {
    const std::uint32_t fs = frame_for(cfg, pkg, payload);
    Harness h(cfg, pkg, fs);
    auto& client = h.client();
    Workload w = make_workload(cfg, pkg, payload);
    BenchRow row = make_row(cfg, payload, client.peer_mailbox().geometry.frame_size);

    std::uint64_t errors = 0;
    auto drain = [&] {
        try {
            if (!client.wait_pong().outcome.ok()) ++errors;
        } catch (const Error& e) {
            if (e.code() == Errc::Timeout || e.code() == Errc::PeerDisconnected) throw;
            ++errors;
        }
    };
    std::uint64_t seq = 0;
    if (cfg.warmup > 0) {
        for (std::uint64_t i = 0; i < cfg.warmup; ++i, ++seq) w.send(client, seq, i + 1 == cfg.warmup);
        drain();
    }

    const auto busy0 = client.wait_stats().busy_ns + h.server_busy_ns();
    const auto err0 = h.server_errors();
    errors = 0;
    std::vector<double> samples;
    samples.reserve(cfg.iters);
    const auto start = Clock::now();
    auto prev = start;
    for (std::uint64_t i = 0; i < cfg.iters; ++i, ++seq) {
        if (cfg.interval.count() > 0) std::this_thread::sleep_for(cfg.interval);
        w.send(client, seq, i + 1 == cfg.iters);
        const auto now = Clock::now();
        samples.push_back(static_cast<double>(ns_since(prev, now)));
        prev = now;
    }
    drain();
    const auto wall = ns_since(start, Clock::now());

    row.stats = summarize(std::move(samples));
    row.stats.wall_time_ns = wall;
    row.stats.messages_per_sec = wall ? static_cast<double>(cfg.iters) * 1e9 / wall : 0;
    row.stats.busy_wait_time_ns = client.wait_stats().busy_ns + h.server_busy_ns() - busy0;
    std::uint64_t audit = 0;
    if (h.server()) {
        // Exactly once, in order: the server consumes slots in placement order.
        const auto& seen = h.seen();
        if (seen.size() != seq) audit += seen.size() > seq ? seen.size() - seq : seq - seen.size();
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (seen[i] != i) ++audit;
        }
    }
    row.stats.errors = std::max(errors, h.server_errors() - err0) + audit;
    return row;
}

template <class Fn>
std::vector<BenchRow> sweep(const BenchConfig& cfg, std::ostream* csv, Fn fn) {
    cfg.validate();
    const auto pkg = testpkg::build_test_package().package;
    std::vector<BenchRow> rows;
    for (std::size_t payload : cfg.payload_sizes) {
        rows.push_back(fn(cfg, pkg, payload));
        emit(csv, rows.back());
    }
    return rows;
}

}  // namespace

const char* shape_name(Shape s) noexcept { return s == Shape::pingpong ? "pingpong" : "rate"; }
const char* func_name(Func f) noexcept { return f == Func::ssum ? "ssum" : "ipt"; }
const char* mode_name(Mode m) noexcept { return m == Mode::injected ? "injected" : "local"; }
const char* transport_name(TransportKind t) noexcept { return t == TransportKind::shm ? "shm" : "tcp"; }
Shape parse_shape(const std::string& s) { return parse_enum(s, kShapes, "shape"); }
Func parse_func(const std::string& s) { return parse_enum(s, kFuncs, "func"); }
Mode parse_mode(const std::string& s) { return parse_enum(s, kModes, "mode"); }
TransportKind parse_transport(const std::string& s) { return parse_enum(s, kTransports, "transport"); }

void BenchConfig::validate() const {
    if (iters < kMinIters) {
        throw Error(Errc::InvalidArgument, "iters must be at least " + std::to_string(kMinIters));
    }
    if (payload_sizes.empty()) throw Error(Errc::InvalidArgument, "no payload sizes");
    if (frame_size % static_cast<std::uint32_t>(wire::kLine) != 0) throw Error(Errc::InvalidArgument, "frame size must be a multiple of 64");
    mailbox::MailboxGeometry{banks, slots, std::max<std::uint32_t>(frame_size, static_cast<std::uint32_t>(wire::kLine))}.validate();
}

double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error(Errc::EmptySamples);
    if (!(p > 0.0 && p <= 100.0)) throw Error(Errc::InvalidArgument, "percentile must be in (0, 100]");
    const double n = static_cast<double>(sorted.size());
    // Rounding guard: 99.9/100*1000 is 999.0000000000001 in binary.
    double rank = std::ceil(p / 100.0 * n - 1e-9);
    rank = std::clamp(rank, 1.0, n);
    return sorted[static_cast<std::size_t>(rank) - 1];
}

double percentile(std::span<const double> samples, double p) {
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    return percentile_sorted(sorted, p);
}

double tail_spread(double tail, double typical) {
    if (typical == 0.0) throw Error(Errc::ZeroTypical);
    return (tail - typical) / typical;
}

BenchStats summarize(std::vector<double> samples) {
    if (samples.empty()) throw Error(Errc::EmptySamples);
    std::sort(samples.begin(), samples.end());
    BenchStats s;
    s.p50_ns = percentile_sorted(samples, 50.0);
    s.p999_ns = percentile_sorted(samples, 99.9);
    s.tail_spread = s.p50_ns > 0 ? tail_spread(s.p999_ns, s.p50_ns) : 0.0;
    s.mean_ns = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    return s;
}

std::uint32_t required_frame_size(const linkpkg::Package& pkg, Func f, Mode m, std::size_t payload) {
    const auto& e = element_for(pkg, f);
    const std::size_t args = testpkg::make_args(0, 0).size();
    if (m == Mode::injected) return wire::frame_size(e.extern_names.size(), e.code.size(), args, payload);
    return wire::frame_size(0, 0, args, payload);
}

std::vector<BenchRow> run_pingpong(const BenchConfig& cfg, std::ostream* csv) {
    BenchConfig c = cfg;
    c.shape = Shape::pingpong;
    return sweep(c, csv, pingpong_one);
}

std::vector<BenchRow> run_injection_rate(const BenchConfig& cfg, std::ostream* csv) {
    BenchConfig c = cfg;
    c.shape = Shape::rate;
    return sweep(c, csv, rate_one);
}

std::vector<BenchRow> run(const BenchConfig& cfg, std::ostream* csv) {
    return cfg.shape == Shape::pingpong ? run_pingpong(cfg, csv) : run_injection_rate(cfg, csv);
}

void write_csv_header(std::ostream& os) {
    os << "shape,func,mode,payload,wait,transport,banks,slots,frame_size,iters,"
          "p50_ns,p999_ns,tail_spread,mean_ns,messages_per_sec,wall_time_ns,busy_wait_time_ns,errors\n";
}

void write_csv_row(std::ostream& os, const BenchRow& r) {
    const auto& s = r.stats;
    os << shape_name(r.shape) << ',' << func_name(r.func) << ',' << mode_name(r.mode) << ',' << r.payload << ','
       << mailbox::wait_kind_name(r.wait) << ',' << transport_name(r.transport) << ',' << r.banks << ','
       << r.slots << ',' << r.frame_size << ',' << r.iters << ',' << std::fixed << std::setprecision(1) << s.p50_ns
       << ',' << s.p999_ns << ',' << std::setprecision(4) << s.tail_spread << ',' << std::setprecision(1)
       << s.mean_ns << ',' << s.messages_per_sec << ',' << s.wall_time_ns << ',' << s.busy_wait_time_ns << ','
       << s.errors << '\n';
    os << std::defaultfloat;
}

void print_summary(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << std::left << std::setw(9) << "shape" << std::setw(6) << "func" << std::setw(10) << "mode"
       << std::right << std::setw(8) << "payload" << std::setw(7) << "frame" << std::setw(12) << "p50_us"
       << std::setw(12) << "p999_us" << std::setw(9) << "spread" << std::setw(13) << "msg/s" << std::setw(12)
       << "busy_ms" << std::setw(7) << "errors" << '\n';
    for (const auto& r : rows) {
        const auto& s = r.stats;
        os << std::left << std::setw(9) << shape_name(r.shape) << std::setw(6) << func_name(r.func)
           << std::setw(10) << mode_name(r.mode) << std::right << std::setw(8) << r.payload << std::setw(7)
           << r.frame_size << std::fixed << std::setprecision(2) << std::setw(12) << s.p50_ns / 1e3
           << std::setw(12) << s.p999_ns / 1e3 << std::setw(9) << s.tail_spread << std::setprecision(0)
           << std::setw(13) << s.messages_per_sec << std::setprecision(2) << std::setw(12)
           << s.busy_wait_time_ns / 1e6 << std::setw(7) << s.errors << std::defaultfloat << '\n';
    }
}

}  // namespace amrt::bench
