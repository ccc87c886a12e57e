#include "amrt/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "amrt/bench.hpp"
#include "amrt/runtime.hpp"
#include "amrt/testpkg.hpp"

namespace amrt::cli {

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

void write_file(const std::string& path, ByteView bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoError, "short write to " + path);
}

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot read " + path);
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
    std::vector<std::size_t> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size()) throw CLI::ValidationError("--payload-sizes", "not a number: " + item);
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw CLI::ValidationError("--payload-sizes", "empty list");
    return out;
}

struct PkgBuildArgs {
    std::string dir;
    std::string out;
    std::string name;
};

int cmd_pkg_build(const PkgBuildArgs& a) {
    std::string name = a.name;
    if (name.empty()) name = std::filesystem::path(a.dir).lexically_normal().filename().string();
    if (name.empty()) name = "package";
    const auto built = linkpkg::build_package(name, linkpkg::read_jam_sources(a.dir));
    write_file(a.out, built.bytes);
    write_file(a.out + ".manifest", as_bytes(built.manifest));
    std::cout << "wrote " << a.out << " (" << built.package.elements.size() << " elements, " << built.bytes.size()
              << " bytes) and " << a.out << ".manifest\n";
    return kExitOk;
}

struct ServeArgs {
    std::string listen = "127.0.0.1:7400";
    std::string pkg;
    std::uint32_t banks = 4;
    std::uint32_t slots = 16;
    std::uint32_t frame_size = 64;
    std::string wait = "spin";
    std::uint32_t spin_iterations = 1000;
    std::string frame_mode = "fixed";
    std::string pong = "echo";
    bool require_receiver_patch = false;
    bool read_only_payload = false;
    double duration = 0;
    unsigned sessions = 0;
};

int cmd_serve(const ServeArgs& a) {
    runtime::ServerConfig scfg;
    scfg.geometry = {a.banks, a.slots, a.frame_size};
    scfg.geometry.validate();
    scfg.wait = {mailbox::parse_wait_kind(a.wait), a.spin_iterations};
    scfg.frame_mode = a.frame_mode == "variable" ? wire::FrameMode::variable : wire::FrameMode::fixed;
    scfg.pong = a.pong == "noop" ? runtime::PongKind::noop : runtime::PongKind::echo_execute;
    scfg.exec.require_receiver_patch = a.require_receiver_patch;
    scfg.exec.read_only_payload = a.read_only_payload;

    const linkpkg::Package pkg =
        a.pkg.empty() ? testpkg::build_test_package().package : linkpkg::load_package(read_file(a.pkg));

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto deadline = a.duration > 0 ? std::chrono::steady_clock::now() +
                                               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                   std::chrono::duration<double>(a.duration))
                                         : std::chrono::steady_clock::time_point::max();
    auto expired = [&] { return g_interrupted.load() || std::chrono::steady_clock::now() >= deadline; };

    transport::TcpListener listener(a.listen);
    const auto host = transport::parse_address(a.listen).first;
    std::cout << "listening on " << host << ':' << listener.port() << std::endl;

    transport::Node node("serve");
    testpkg::TestHost test_host;
    unsigned served = 0;
    while (!expired() && (a.sessions == 0 || served < a.sessions)) {
        auto link = listener.accept(node, std::chrono::milliseconds(100));
        if (!link) continue;
        runtime::AmServer server(node, test_host.symbols, scfg);
        server.load_package(pkg);
        server.set_peer(link.get());
        std::cout << "session " << served << " connected" << std::endl;
        while (link->connected() && !expired()) server.poll_once(std::chrono::milliseconds(20));
        const auto st = server.stats();
        std::cout << "session " << served << " closed: received " << st.received << ", executed " << st.executed
                  << ", errors " << st.errors;
        if (!st.last_error.empty()) std::cout << " (last: " << st.last_error << ')';
        std::cout << std::endl;
        link->disconnect();
        ++served;
    }
    return kExitOk;
}

struct BenchArgs {
    std::string shape = "pingpong";
    std::string func = "ssum";
    std::string mode = "injected";
    std::string payload_sizes = "4";
    std::string transport = "shm";
    std::string peer;
    std::string csv;
    std::string wait = "spin";
    std::uint32_t spin_iterations = 1000;
    std::string patch = "sender";
    std::uint64_t warmup = 1000;
    std::uint64_t iters = 100000;
    std::uint32_t banks = 4;
    std::uint32_t slots = 16;
    std::uint32_t frame_size = 0;
    std::uint64_t interval_us = 0;
    std::uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a) {
    bench::BenchConfig cfg;
    cfg.shape = bench::parse_shape(a.shape);
    cfg.func = bench::parse_func(a.func);
    cfg.mode = bench::parse_mode(a.mode);
    cfg.payload_sizes = parse_sizes(a.payload_sizes);
    cfg.transport = bench::parse_transport(a.transport);
    cfg.peer = a.peer;
    cfg.wait = {mailbox::parse_wait_kind(a.wait), a.spin_iterations};
    cfg.patch = a.patch == "receiver" ? linkpkg::PatchMode::receiver : linkpkg::PatchMode::sender;
    cfg.warmup = a.warmup;
    cfg.iters = a.iters;
    cfg.banks = a.banks;
    cfg.slots = a.slots;
    cfg.frame_size = a.frame_size;
    cfg.interval = std::chrono::microseconds(a.interval_us);
    cfg.seed = a.seed;

    std::ofstream csv;
    if (!a.csv.empty()) {
        csv.open(a.csv, std::ios::trunc);
        if (!csv) throw Error(Errc::IoError, "cannot write " + a.csv);
        bench::write_csv_header(csv);
        csv.flush();
    }
    const auto rows = bench::run(cfg, a.csv.empty() ? nullptr : &csv);
    bench::print_summary(std::cout, rows);
    std::uint64_t errors = 0;
    for (const auto& r : rows) errors += r.stats.errors;
    if (errors) {
        std::cerr << "amrt: " << errors << " message errors during the run\n";
        return kExitRuntime;
    }
    return kExitOk;
}

struct ResolveArgs {
    std::string peer;
    std::vector<std::string> names;
};

int cmd_resolve(const ResolveArgs& a) {
    transport::Node node("resolve");
    auto link = transport::tcp_connect(a.peer, node);
    const auto handles = linkpkg::resolve_symbols(*link, a.names);
    for (std::size_t i = 0; i < a.names.size(); ++i) {
        std::cout << a.names[i] << ' ' << handles[i] << '\n';
    }
    link->disconnect();
    return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Active-message runtime: package toolchain, receiver and benchmarks", "amrt"};
    app.require_subcommand(1);

    PkgBuildArgs pb;
    auto* pkg_build = app.add_subcommand("pkg-build", "Assemble a directory of jam_*.amc sources into a package");
    pkg_build->add_option("dir", pb.dir, "Directory with jam sources")->required()->check(CLI::ExistingDirectory);
    pkg_build->add_option("-o,--output", pb.out, "Package file to write (manifest goes to <file>.manifest)")
        ->required();
    pkg_build->add_option("--name", pb.name, "Package name (default: directory name)");

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Run a receiver on a TCP address");
    serve->add_option("--listen", sv.listen, "host:port to listen on (port 0 picks one)")->capture_default_str();
    serve->add_option("--pkg", sv.pkg, "Package for local invocation (default: built-in test package)");
    serve->add_option("--banks", sv.banks, "Mailbox banks M")->capture_default_str();
    serve->add_option("--slots", sv.slots, "Slots per bank N")->capture_default_str();
    serve->add_option("--frame-size", sv.frame_size, "Slot size in bytes, multiple of 64")->capture_default_str();
    serve->add_option("--wait", sv.wait, "Wait strategy")
        ->check(CLI::IsMember({"spin", "hybrid"}))
        ->capture_default_str();
    serve->add_option("--spin-iterations", sv.spin_iterations, "Polls before a hybrid wait blocks")
        ->capture_default_str();
    serve->add_option("--frame-mode", sv.frame_mode, "Slot framing")
        ->check(CLI::IsMember({"fixed", "variable"}))
        ->capture_default_str();
    serve->add_option("--pong", sv.pong, "Reply to RESPOND requests with")
        ->check(CLI::IsMember({"echo", "noop"}))
        ->capture_default_str();
    serve->add_flag("--require-receiver-patch", sv.require_receiver_patch,
                    "Refuse injected frames that carry sender-patched handles");
    serve->add_flag("--read-only-payload", sv.read_only_payload, "Map message payloads read-only");
    serve->add_option("--duration", sv.duration, "Stop after this many seconds (0: run until interrupted)");
    serve->add_option("--sessions", sv.sessions, "Stop after this many connections (0: unlimited)");

    BenchArgs bn;
    auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark sweep");
    bench_cmd->add_option("--shape", bn.shape, "Benchmark shape")
        ->check(CLI::IsMember({"pingpong", "rate"}))
        ->capture_default_str();
    bench_cmd->add_option("--func", bn.func, "Active message")
        ->check(CLI::IsMember({"ssum", "ipt"}))
        ->capture_default_str();
    bench_cmd->add_option("--mode", bn.mode, "Invocation method")
        ->check(CLI::IsMember({"injected", "local"}))
        ->capture_default_str();
    bench_cmd->add_option("--payload-sizes", bn.payload_sizes, "Comma-separated payload sizes in bytes")
        ->capture_default_str();
    bench_cmd->add_option("--transport", bn.transport, "Transport")
        ->check(CLI::IsMember({"shm", "tcp"}))
        ->capture_default_str();
    bench_cmd->add_option("--peer", bn.peer, "host:port of a running `amrt serve` (tcp only)");
    bench_cmd->add_option("--csv", bn.csv, "Write one CSV row per payload size here");
    bench_cmd->add_option("--wait", bn.wait, "Wait strategy")
        ->check(CLI::IsMember({"spin", "hybrid"}))
        ->capture_default_str();
    bench_cmd->add_option("--spin-iterations", bn.spin_iterations, "Polls before a hybrid wait blocks")
        ->capture_default_str();
    bench_cmd->add_option("--patch", bn.patch, "Who patches the indirection table")
        ->check(CLI::IsMember({"sender", "receiver"}))
        ->capture_default_str();
    bench_cmd->add_option("--warmup", bn.warmup, "Discarded iterations")->capture_default_str();
    bench_cmd->add_option("--iters", bn.iters, "Measured iterations (at least 1000)")->capture_default_str();
    bench_cmd->add_option("--banks", bn.banks, "Mailbox banks M")->capture_default_str();
    bench_cmd->add_option("--slots", bn.slots, "Slots per bank N")->capture_default_str();
    bench_cmd->add_option("--frame-size", bn.frame_size, "Minimum slot size (0: fit the message)")
        ->capture_default_str();
    bench_cmd->add_option("--interval-us", bn.interval_us, "Pause between messages in microseconds")
        ->capture_default_str();
    bench_cmd->add_option("--seed", bn.seed, "Payload and key seed")->capture_default_str();

    ResolveArgs rs;
    auto* resolve = app.add_subcommand("resolve", "Ask a running receiver for symbol handles");
    resolve->add_option("--peer", rs.peer, "host:port of the receiver")->required();
    resolve->add_option("names", rs.names, "Symbol names")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*pkg_build) return cmd_pkg_build(pb);
        if (*serve) return cmd_serve(sv);
        if (*bench_cmd) return cmd_bench(bn);
        if (*resolve) return cmd_resolve(rs);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "amrt: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "amrt: " << e.what() << '\n';
        return e.code() == Errc::InvalidArgument ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "amrt: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace amrt::cli
