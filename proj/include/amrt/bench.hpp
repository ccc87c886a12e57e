#pragma once

// Ping-pong and injection-rate benchmarks over the test package, with
// nearest-rank latency statistics and CSV output.

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "amrt/linkpkg.hpp"
#include "amrt/mailbox.hpp"
#include "amrt/wire.hpp"

namespace amrt::bench {

enum class Shape { pingpong, rate };
enum class Func { ssum, ipt };
enum class Mode { injected, local };
enum class TransportKind { shm, tcp };

const char* shape_name(Shape s) noexcept;
const char* func_name(Func f) noexcept;
const char* mode_name(Mode m) noexcept;
const char* transport_name(TransportKind t) noexcept;
Shape parse_shape(const std::string& s);
Func parse_func(const std::string& s);
Mode parse_mode(const std::string& s);
TransportKind parse_transport(const std::string& s);

inline constexpr std::uint64_t kMinIters = 1000;

struct BenchConfig {
    Shape shape = Shape::pingpong;
    Func func = Func::ssum;
    Mode mode = Mode::injected;
    std::vector<std::size_t> payload_sizes{4};
    std::uint64_t warmup = 1000;
    std::uint64_t iters = 100000;
    mailbox::WaitStrategy wait;
    std::uint32_t banks = 4;
    std::uint32_t slots = 16;
    TransportKind transport = TransportKind::shm;
    // 0 picks the smallest multiple of 64 that fits each message.
    std::uint32_t frame_size = 0;
    // Empty: both ends run in this process.
    std::string peer;
    linkpkg::PatchMode patch = linkpkg::PatchMode::sender;
    // Pause between iterations (throttled workloads). Not part of samples.
    std::chrono::microseconds interval{0};
    std::uint64_t seed = 1;

    void validate() const;
};

struct BenchStats {
    double p50_ns = 0;
    double p999_ns = 0;
    double tail_spread = 0;
    double mean_ns = 0;
    double messages_per_sec = 0;
    std::uint64_t wall_time_ns = 0;
    std::uint64_t busy_wait_time_ns = 0;
    std::uint64_t errors = 0;
};

struct BenchRow {
    Shape shape;
    Func func;
    Mode mode;
    std::size_t payload;
    mailbox::WaitKind wait;
    TransportKind transport;
    std::uint32_t banks;
    std::uint32_t slots;
    std::uint32_t frame_size;
    std::uint64_t iters;
    BenchStats stats;
};

/// Nearest rank: the element at 1-based rank ceil(p/100 * n) of the sorted
/// samples. Throws EmptySamples, or InvalidArgument unless 0 < p <= 100.
double percentile(std::span<const double> samples, double p);
/// Same on data that is already sorted ascending.
double percentile_sorted(std::span<const double> sorted, double p);

/// (tail - typical) / typical. Throws ZeroTypical.
double tail_spread(double tail, double typical);

/// Fills p50, p99.9, tail spread and mean.
BenchStats summarize(std::vector<double> samples);

/// Frame size a benchmark message needs for this function, mode and payload.
std::uint32_t required_frame_size(const linkpkg::Package& pkg, Func f, Mode m, std::size_t payload);

/// Runs one shape per payload size. Each finished row is appended to `csv`
/// (if given) and flushed, so an abort leaves the completed rows behind.
std::vector<BenchRow> run_pingpong(const BenchConfig& cfg, std::ostream* csv = nullptr);
std::vector<BenchRow> run_injection_rate(const BenchConfig& cfg, std::ostream* csv = nullptr);
std::vector<BenchRow> run(const BenchConfig& cfg, std::ostream* csv = nullptr);

void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const BenchRow& row);
void print_summary(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace amrt::bench
