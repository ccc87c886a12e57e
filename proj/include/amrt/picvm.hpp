#pragma once

// Position-independent bytecode for mobile functions.
//
// Each instruction is 8 bytes: opcode, rd, rs1, rs2, imm (i32 LE). Code never
// names an absolute address. Branches are relative to the current
// instruction, memory operands are offsets into one of three regions, and
// calls to host functions go through CALLX, which indexes the per-message
// indirection table.
//
// Entry convention: r1 = payload length, r2 = args length, all other
// registers zero. On HALT, r0 holds the message result.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amrt/bytes.hpp"

namespace amrt::picvm {

inline constexpr std::size_t kInstructionSize = 8;
inline constexpr std::size_t kRegisterCount = 16;
inline constexpr std::size_t kScratchSize = 4096;
inline constexpr std::uint64_t kDefaultFuel = 1'000'000;
inline constexpr std::size_t kMaxCallArgs = 6;

enum class Op : std::uint8_t {
    HALT = 0x00,
    LDI = 0x01,
    MOV = 0x02,
    ADD = 0x10,
    SUB = 0x11,
    MUL = 0x12,
    DIVU = 0x13,
    AND = 0x14,
    OR = 0x15,
    XOR = 0x16,
    SHL = 0x17,
    SHR = 0x18,
    LD1 = 0x20,
    LD2 = 0x21,
    LD4 = 0x22,
    LD8 = 0x23,
    ST1 = 0x28,
    ST2 = 0x29,
    ST4 = 0x2A,
    ST8 = 0x2B,
    JMP = 0x30,
    BEQ = 0x31,
    BNE = 0x32,
    BLTU = 0x33,
    BGEU = 0x34,
    CALLX = 0x40,
};

enum class Region : std::uint8_t { args = 0, payload = 1, scratch = 2 };

struct Instruction {
    Op op = Op::HALT;
    std::uint8_t rd = 0;
    std::uint8_t rs1 = 0;
    std::uint8_t rs2 = 0;
    std::int32_t imm = 0;

    friend bool operator==(const Instruction&, const Instruction&) = default;
};

std::optional<Op> op_from_byte(std::uint8_t b) noexcept;
std::string_view op_name(Op op) noexcept;
std::optional<Op> op_from_name(std::string_view name) noexcept;

bool is_branch(Op op) noexcept;
bool is_load(Op op) noexcept;
bool is_store(Op op) noexcept;
/// Access width in bytes for LD*/ST*.
unsigned access_width(Op op) noexcept;

void encode_instruction(const Instruction& in, std::uint8_t* dst) noexcept;
Bytes encode_program(std::span<const Instruction> program);

/// Validated, immutable code. Only `validate` produces one.
class CodeObject {
public:
    const std::vector<Instruction>& instructions() const noexcept { return instructions_; }
    std::size_t extern_count() const noexcept { return extern_count_; }
    std::size_t byte_size() const noexcept { return instructions_.size() * kInstructionSize; }

private:
    friend CodeObject validate(ByteView code_bytes, std::size_t extern_count);
    std::vector<Instruction> instructions_;
    std::size_t extern_count_ = 0;
};

/// Decodes and statically checks code. Rejection is total.
CodeObject validate(ByteView code_bytes, std::size_t extern_count);

// Host function ABI: up to six integer arguments, one integer result, or a
// nonzero 32-bit failure code.
struct ExternCall {
    std::array<std::uint64_t, kMaxCallArgs> argv{};
    ByteView args;
    ByteView payload;
};

struct ExternResult {
    std::uint64_t value = 0;
    std::uint32_t error = 0;

    static ExternResult ok(std::uint64_t v) noexcept { return {v, 0}; }
    static ExternResult fail(std::uint32_t code) noexcept { return {0, code}; }
};

using HostFn = std::function<ExternResult(const ExternCall&)>;

// Resolves indirection-table handles to host functions on the executing side.
class ExternResolver {
public:
    virtual ~ExternResolver() = default;
    /// Returns nullopt if the handle is not live.
    virtual std::optional<ExternResult> invoke(std::uint64_t handle, const ExternCall& call) const = 0;
};

enum class TrapReason : std::uint8_t {
    OutOfBoundsAccess,
    ReadOnlyViolation,
    DivideByZero,
    ExternalFailed,
    InvalidHandle,
};

std::string_view trap_name(TrapReason r) noexcept;

struct ExitStatus {
    enum class Kind : std::uint8_t { halted, trapped, fuel_exhausted } kind = Kind::halted;
    TrapReason trap = TrapReason::OutOfBoundsAccess;
    std::uint32_t extern_error = 0;  // set for ExternalFailed
    std::size_t pc = 0;              // instruction index where execution stopped
    std::uint64_t executed = 0;

    bool halted() const noexcept { return kind == Kind::halted; }
    std::string describe() const;
};

struct ExecContext {
    std::array<std::uint64_t, kRegisterCount> regs{};
    ByteView args;
    MutableByteView payload;
    bool payload_read_only = false;
    std::array<std::uint8_t, kScratchSize> scratch{};
    std::span<const std::uint64_t> indirection;
    std::uint64_t fuel = kDefaultFuel;
    const ExternResolver* host = nullptr;

    /// Zeroes registers and scratch and applies the entry convention.
    void reset_for_entry() noexcept;
};

/// Runs code against ctx. Requires ctx.indirection.size() == code.extern_count().
ExitStatus execute(const CodeObject& code, ExecContext& ctx);

}  // namespace amrt::picvm
