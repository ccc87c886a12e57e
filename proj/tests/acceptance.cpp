// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amrt/bench.hpp"
#include "amrt/picvm.hpp"
#include "amrt/wire.hpp"
#include "jam_runner.hpp"
#include "runtime_fixture.hpp"
#include "torn_probe.hpp"

using namespace amrt;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... xs) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, xs...);
    return buf;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

wire::MessageParts random_parts(std::mt19937_64& rng) {
    wire::MessageParts p;
    const bool injected = rng() & 1;
    p.header.flags = static_cast<std::uint8_t>((injected ? wire::flags::kInjected : 0) | (rng() & wire::flags::kRespond) |
                                               (injected ? (rng() & wire::flags::kReceiverPatch) : 0));
    p.header.element_id = static_cast<std::uint16_t>(rng());
    p.header.bank = static_cast<std::uint8_t>(rng());
    p.header.slot = static_cast<std::uint8_t>(rng());
    if (injected) {
        p.got_entries.resize(rng() % 6);
        for (auto& e : p.got_entries) e = rng();
        p.code = random_bytes(rng, 8 * (rng() % 40));
    }
    p.args = random_bytes(rng, rng() % 48);
    p.payload = random_bytes(rng, rng() % 1500);
    p.sync_header();
    return p;
}

// 1 ----------------------------------------------------------------------
Verdict wire_fidelity() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uint64_t mismatches = 0;
    constexpr int kMessages = 10000;
    for (int i = 0; i < kMessages; ++i) {
        const auto p = random_parts(rng);
        const auto mode = (i & 1) ? wire::FrameMode::variable : wire::FrameMode::fixed;
        const wire::FrameConfig cfg{mode == wire::FrameMode::fixed ? wire::frame_size(p) : 4096, mode};
        try {
            const Bytes f = wire::encode_frame(p, cfg);
            if (f.back() != wire::kSigMag || !(wire::decode_frame(f, cfg) == p)) ++mismatches;
        } catch (const Error&) {
            ++mismatches;
        }
    }
    const auto local = wire::frame_size(0, 0, 0, 4);
    const auto injected = wire::frame_size(2, 1408, 0, 4);
    const double secs = seconds_since(t0);
    return {mismatches == 0 && local == 64 && injected == 1472 && secs < 10.0,
            fmt("%d round trips, %llu mismatches; local %u B, injected %u B; %.2fs", kMessages,
                static_cast<unsigned long long>(mismatches), local, injected, secs)};
}

// 2 ----------------------------------------------------------------------
Verdict linking_equivalence() {
    const auto t0 = Clock::now();
    runtime::ServerConfig scfg;
    scfg.geometry = {4, 16, 8192};
    std::string detail;
    bool pass = true;
    for (const char* jam : {"ssum", "ipt"}) {
        runtime::ClientConfig sender, receiver;
        receiver.patch = linkpkg::PatchMode::receiver;
        fixture::Pair ps(scfg, sender), pr(scfg, receiver), pl(scfg);
        ps.client->handshake(ps.pkg);
        std::mt19937_64 rng(jam[0]);
        std::vector<std::uint64_t> keys(200);
        for (auto& k : keys) k = rng();
        for (int i = 0; i < 1000; ++i) {
            const Bytes args = testpkg::make_args(keys[rng() % keys.size()], static_cast<std::uint64_t>(i));
            const Bytes payload = random_bytes(rng, rng() % 5000);
            ps.client->send_injected(ps.element(jam), args, payload);
            pr.client->send_injected(pr.element(jam), args, payload);
            pl.client->send_local(pl.element(jam).element_id, args, payload);
            if (!ps.poll() || !pr.poll() || !pl.poll()) return {false, std::string(jam) + ": receiver stalled"};
        }
        const std::uint64_t errors =
            ps.server->stats().errors + pr.server->stats().errors + pl.server->stats().errors;
        const bool same = ps.rx_host.ssum == pr.rx_host.ssum && pr.rx_host.ssum == pl.rx_host.ssum &&
                          ps.rx_host.ipt == pr.rx_host.ipt && pr.rx_host.ipt == pl.rx_host.ipt;
        const bool nonempty = !ps.rx_host.ssum.results.empty() || ps.rx_host.ipt.occupancy() > 0;
        pass = pass && same && nonempty && errors == 0;
        detail += fmt("%s: %s, %llu errors; ", jam, same ? "identical" : "DIFFERENT",
                      static_cast<unsigned long long>(errors));
    }
    const double secs = seconds_since(t0);
    return {pass && secs < 30.0, detail + fmt("%.2fs", secs)};
}

// 3 ----------------------------------------------------------------------
Verdict semantics_oracles() {
    std::mt19937_64 rng(303);
    std::uint64_t ssum_bad = 0, ssum_runs = 0;
    {
        fixture::JamRunner r;
        for (std::size_t n = 4; n <= 32768; n *= 2) {
            for (std::size_t len : {n, n + 1, n + 3, n + static_cast<std::size_t>(rng() % n)}) {
                if (len > 32768) continue;
                const Bytes payload = random_bytes(rng, len);
                const auto out = r.run("ssum", {}, payload);
                ++ssum_runs;
                if (!out.ok() || r.host.ssum.results.back() != testpkg::native_ssum(payload)) ++ssum_bad;
            }
        }
    }

    std::string ipt_why = "ok";
    std::uint64_t collisions = 0, repeats = 0;
    bool ipt_ok = true;
    {
        fixture::JamRunner r;
        testpkg::IptOracle oracle(r.host.ipt.capacity());
        std::vector<std::uint64_t> keys(800);
        for (auto& k : keys) k = rng();
        for (std::size_t i = 0; i < 100; ++i) {
            std::uint64_t k;
            do k = rng();
            while (r.host.ipt.home_slot(k) != r.host.ipt.home_slot(keys[i]));
            keys.push_back(k);
        }
        std::map<std::size_t, std::set<std::uint64_t>> homes;
        std::set<std::uint64_t> used;
        for (int i = 0; i < 10000 && ipt_ok; ++i) {
            const std::uint64_t key = keys[rng() % keys.size()];
            if (!used.insert(key).second) ++repeats;
            homes[r.host.ipt.home_slot(key)].insert(key);
            const std::size_t len = (rng() % 10 == 0) ? 4096 + rng() % 64 : rng() % 800;
            const Bytes payload = random_bytes(rng, len);
            const auto out = r.run("ipt", testpkg::make_args(key, static_cast<std::uint64_t>(i)), payload);
            oracle.put(key, payload, r.host.ipt.slot_size());
            if (!out.ok()) ipt_ok = false, ipt_why = out.detail;
        }
        for (const auto& [slot, ks] : homes) collisions += ks.size() - 1;
        if (ipt_ok) ipt_ok = fixture::ipt_matches(r.host.ipt, oracle, &ipt_why);
    }

    bool full_ok = true;
    {
        fixture::JamRunner r(64);
        for (std::uint64_t k = 0; k < 64; ++k) full_ok &= r.run("ipt", testpkg::make_args(k * 7919, 0), Bytes(8, 1)).ok();
        full_ok &= r.run("ipt", testpkg::make_args(7919, 1), Bytes(8, 2)).ok();
        const auto over = r.run("ipt", testpkg::make_args(1, 0), Bytes(8, 3));
        full_ok &= over.status.trap == picvm::TrapReason::ExternalFailed &&
                   over.status.extern_error == testpkg::kErrTableFull && r.host.ipt.occupancy() == 64;
    }
    return {ssum_bad == 0 && ipt_ok && full_ok && collisions > 0 && repeats > 0,
            fmt("ssum %llu/%llu match; ipt 10000 ops (%llu colliding keys, %llu repeats): %s; TableFull at 64: %s",
                static_cast<unsigned long long>(ssum_runs - ssum_bad), static_cast<unsigned long long>(ssum_runs),
                static_cast<unsigned long long>(collisions), static_cast<unsigned long long>(repeats),
                ipt_why.c_str(), full_ok ? "yes" : "no")};
}

// 4 ----------------------------------------------------------------------
Verdict flow_control_soak() {
    const auto t0 = Clock::now();
    std::string detail;
    bool pass = true;
    for (std::uint32_t m : {1u, 4u}) {
        for (std::uint32_t n : {1u, 16u}) {
            bench::BenchConfig c;
            c.shape = bench::Shape::rate;
            c.mode = bench::Mode::local;
            c.warmup = 0;
            c.iters = 100000;
            c.banks = m;
            c.slots = n;
            const auto t = Clock::now();
            const auto rows = bench::run(c);
            const auto err = rows.at(0).stats.errors;
            pass = pass && err == 0;
            detail += fmt("%ux%u: %llu audit/exec errors %.2fs; ", m, n, static_cast<unsigned long long>(err),
                          seconds_since(t));
        }
    }
    const double secs = seconds_since(t0);
    return {pass && secs < 60.0, detail + fmt("total %.2fs", secs)};
}

// 5 ----------------------------------------------------------------------
Verdict ordering_contract() {
    constexpr std::uint64_t kTrials = 10000;
    const auto ordered = probe::run_torn_trials({true, 51}, false, kTrials);
    const auto weak = probe::run_torn_trials({false, 52}, false, kTrials);
    const auto fenced = probe::run_torn_trials({false, 53}, true, kTrials);
    const bool pass = ordered.trials == kTrials && fenced.trials == kTrials && weak.trials == kTrials &&
                      ordered.torn == 0 && fenced.torn == 0 && weak.torn > 0 && ordered.timeouts == 0 &&
                      weak.timeouts == 0 && fenced.timeouts == 0;
    return {pass, fmt("torn frames over %llu trials: ordered %llu, weak unfenced %llu, weak fenced %llu",
                      static_cast<unsigned long long>(kTrials), static_cast<unsigned long long>(ordered.torn),
                      static_cast<unsigned long long>(weak.torn), static_cast<unsigned long long>(fenced.torn))};
}

// 6 ----------------------------------------------------------------------
// Per-message one-way latency (RTT/2) with injected and local messages
// alternating on one connection, so both see the same machine state.
std::pair<double, double> paired_p50(std::size_t size, std::uint64_t seed) {
    const auto pkg = testpkg::build_test_package().package;
    runtime::ServerConfig scfg;
    scfg.geometry = {4, 16, bench::required_frame_size(pkg, bench::Func::ssum, bench::Mode::injected, size)};
    fixture::Pair p(scfg);
    p.client->handshake(p.pkg);
    p.start();
    std::mt19937_64 rng(seed);
    const Bytes payload = random_bytes(rng, size);
    const auto& e = p.element("ssum");
    auto once = [&](bool injected, std::uint64_t seq) {
        const Bytes args = testpkg::make_args(rng() % 256, seq);
        const auto t0 = Clock::now();
        if (injected) {
            p.client->send_injected(e, args, payload, true);
        } else {
            p.client->send_local(e.element_id, args, payload, true);
        }
        if (!p.client->wait_pong().outcome.ok()) throw Error(Errc::ExecutionTrapped, "pong failed");
        return std::chrono::duration<double, std::nano>(Clock::now() - t0).count() / 2.0;
    };
    constexpr std::uint64_t kWarmup = 1000, kIters = 10000;
    for (std::uint64_t i = 0; i < kWarmup; ++i) once(i & 1, i);
    std::vector<double> inj, loc;
    for (std::uint64_t i = 0; i < kIters; ++i) {
        const bool inj_first = i & 1;
        const double a = once(inj_first, 2 * i);
        const double b = once(!inj_first, 2 * i + 1);
        inj.push_back(inj_first ? a : b);
        loc.push_back(inj_first ? b : a);
    }
    p.stop();
    return {bench::percentile(inj, 50), bench::percentile(loc, 50)};
}

Verdict injected_vs_local() {
    const std::vector<std::size_t> sizes = {4, 16, 64, 256, 1024, 4096, 16384};
    constexpr int kReps = 3;
    constexpr double kGapLimit = 0.10;
    constexpr double kNoise = 0.05;
    const std::size_t code = testpkg::build_test_package().package.find("ssum")->code.size();

    std::map<std::size_t, std::vector<double>> inj, loc;
    for (int rep = 0; rep < kReps; ++rep) {
        for (std::size_t size : sizes) {
            const auto [i, l] = paired_p50(size, static_cast<std::uint64_t>(rep + 1));
            inj[size].push_back(i);
            loc[size].push_back(l);
        }
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    std::vector<double> gaps;
    std::string detail = fmt("code %zu B; gap by payload:", code);
    for (std::size_t s : sizes) {
        const double i = median(inj[s]), l = median(loc[s]);
        gaps.push_back((i - l) / l);
        detail += fmt(" %zu:%+.3f", s, gaps.back());
    }
    bool pass = median(inj[4]) > median(loc[4]);
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (sizes[k] >= 8 * code && gaps[k] > kGapLimit) pass = false;
        if (k > 0 && gaps[k] > gaps[k - 1] + kNoise) pass = false;
    }
    return {pass, detail};
}

// 7 ----------------------------------------------------------------------
Verdict wait_strategy() {
    bench::BenchConfig c;
    c.mode = bench::Mode::local;
    c.payload_sizes = {4};
    c.warmup = 100;
    c.iters = 10000;
    c.interval = 1ms;
    c.wait = {mailbox::WaitKind::spin, 1000};
    const auto spin = bench::run(c).at(0).stats;
    c.wait = {mailbox::WaitKind::hybrid, 1000};
    const auto hybrid = bench::run(c).at(0).stats;
    const double busy_ratio =
        spin.busy_wait_time_ns ? static_cast<double>(hybrid.busy_wait_time_ns) / spin.busy_wait_time_ns : 1.0;
    const double p50_ratio = hybrid.p50_ns / spin.p50_ns;
    return {spin.errors == 0 && hybrid.errors == 0 && busy_ratio <= 0.5 && p50_ratio <= 2.0,
            fmt("busy spin %.1fms hybrid %.1fms (ratio %.3f); p50 spin %.0fns hybrid %.0fns (ratio %.2f)",
                spin.busy_wait_time_ns / 1e6, hybrid.busy_wait_time_ns / 1e6, busy_ratio, spin.p50_ns,
                hybrid.p50_ns, p50_ratio)};
}

// 8 ----------------------------------------------------------------------
Verdict statistics() {
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
    std::vector<double> h(100);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<double>(i + 1);
    const double p999 = bench::percentile(v, 99.9);
    const double p50 = bench::percentile(h, 50);
    const double single = bench::percentile(std::vector<double>{7}, 99.9);
    const double a = bench::tail_spread(282, 100);
    const double b = bench::tail_spread(237, 100);
    const bool pass = p999 == 999 && p50 == 50 && single == 7 && a == 1.82 && b == 1.37 && bench::tail_spread(10, 10) == 0;
    return {pass, fmt("p99.9[1..1000]=%g p50[1..100]=%g p99.9[7]=%g spread(282,100)=%.17g spread(237,100)=%.17g",
                      p999, p50, single, a, b)};
}

// 9 ----------------------------------------------------------------------
Verdict robustness() {
    constexpr int kInputs = 1000000;
    std::mt19937_64 rng(909);
    std::uint64_t decoded = 0, unexpected = 0, validated = 0, ran = 0, escapes = 0;

    std::vector<Bytes> seeds;
    for (int i = 0; i < 64; ++i) {
        const auto p = random_parts(rng);
        seeds.push_back(wire::encode_frame(p, {wire::frame_size(p), wire::FrameMode::fixed}));
    }
    for (int i = 0; i < kInputs; ++i) {
        Bytes in;
        if (i & 1) {
            in = seeds[rng() % seeds.size()];
            for (int f = 1 + static_cast<int>(rng() % 4); f > 0; --f) in[rng() % in.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        } else {
            in = random_bytes(rng, rng() % 600);
        }
        const auto mode = (rng() & 1) ? wire::FrameMode::fixed : wire::FrameMode::variable;
        const std::uint32_t fs = mode == wire::FrameMode::fixed ? static_cast<std::uint32_t>(in.size()) : 4096;
        try {
            wire::decode_frame(in, {fs, mode});
            ++decoded;
        } catch (const Error&) {
        } catch (...) {
            ++unexpected;
        }
    }

    struct Bump : picvm::ExternResolver {
        std::optional<picvm::ExternResult> invoke(std::uint64_t h, const picvm::ExternCall& c) const override {
            if (h == 2) return std::nullopt;
            return picvm::ExternResult::ok(c.argv[0] + 1);
        }
    } host;
    const std::vector<std::uint64_t> table = {1, 2};
    for (int i = 0; i < kInputs; ++i) {
        Bytes code = random_bytes(rng, 8 * (1 + rng() % 12));
        for (std::size_t k = 0; k < code.size(); k += 8) {
            if (rng() & 1) code[k] = static_cast<std::uint8_t>(rng() % 0x45);
            if (rng() & 1) code[k + 1] &= 0x0F, code[k + 2] &= 0x0F, code[k + 3] &= 0x03;
        }
        picvm::CodeObject obj;
        try {
            obj = picvm::validate(code, table.size());
            ++validated;
        } catch (const Error&) {
            continue;
        } catch (...) {
            ++unexpected;
            continue;
        }
        Bytes args_buf(16 + 32 + 16, 0xC3), payload_buf(16 + 64 + 16, 0xC3);
        picvm::ExecContext ctx;
        ctx.args = ByteView(args_buf).subspan(16, 32);
        ctx.payload = MutableByteView(payload_buf).subspan(16, 64);
        ctx.host = &host;
        ctx.indirection = table;
        ctx.fuel = 256;
        try {
            const auto st = picvm::execute(obj, ctx);
            ++ran;
            if (st.executed > 256) ++escapes;
        } catch (...) {
            ++unexpected;
        }
        for (std::size_t g = 0; g < 16; ++g) {
            if (payload_buf[g] != 0xC3 || payload_buf[payload_buf.size() - 1 - g] != 0xC3) ++escapes;
        }
        for (std::size_t g = 0; g < args_buf.size(); ++g) {
            if ((g < 16 || g >= 48) && args_buf[g] != 0xC3) ++escapes;
        }
    }

    // Live stream: one corrupted slot among 200 messages.
    runtime::ServerConfig scfg;
    scfg.geometry = {4, 16, 128};
    fixture::Pair p(scfg);
    const auto& g = p.client->peer_mailbox().geometry;
    std::uint64_t after_ok = 0;
    for (std::uint64_t k = 0; k < 200; ++k) {
        p.client->send_local(p.element("ssum").element_id, testpkg::make_args(0, k),
                             testpkg::make_payload({static_cast<std::uint32_t>(k)}));
        if (k == 100) {
            const auto [b, s] = g.placement(k);
            p.mailbox().store(g.slot_offset(b, s) + 1, 0xEE);
        }
        if (!p.poll()) return {false, "receiver stalled on live stream"};
    }
    const auto st = p.server->stats();
    const auto& res = p.rx_host.ssum.results;
    for (std::size_t i = 100; i < res.size(); ++i) after_ok += res[i] == i + 1;
    const bool stream_ok = st.received == 200 && st.errors == 1 && st.executed == 199 && after_ok == 99;

    return {unexpected == 0 && escapes == 0 && stream_ok,
            fmt("decode: %d inputs, %llu accepted; validate: %d inputs, %llu accepted, %llu run; %llu unexpected, "
                "%llu escapes; stream: %llu received, %llu executed, %llu errors",
                kInputs, static_cast<unsigned long long>(decoded), kInputs,
                static_cast<unsigned long long>(validated), static_cast<unsigned long long>(ran),
                static_cast<unsigned long long>(unexpected), static_cast<unsigned long long>(escapes),
                static_cast<unsigned long long>(st.received), static_cast<unsigned long long>(st.executed),
                static_cast<unsigned long long>(st.errors))};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"1 wire fidelity", wire_fidelity},
        {"2 linking equivalence", linking_equivalence},
        {"3 semantics oracles", semantics_oracles},
        {"4 flow-control soak", flow_control_soak},
        {"5 ordering contract", ordering_contract},
        {"6 injected vs local trend", injected_vs_local},
        {"7 wait-strategy efficiency", wait_strategy},
        {"8 statistics", statistics},
        {"9 robustness", robustness},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << v.detail << std::endl;
    }
    std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all passed")
              << std::endl;
    return failed ? 1 : 0;
}
