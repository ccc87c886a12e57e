#include "amrt/picvm.hpp"

#include <string>

namespace amrt::picvm {

namespace {

struct OpInfo {
    Op op;
    std::string_view name;
};

constexpr OpInfo kOps[] = {
    {Op::HALT, "HALT"}, {Op::LDI, "LDI"},   {Op::MOV, "MOV"},   {Op::ADD, "ADD"},
    {Op::SUB, "SUB"},   {Op::MUL, "MUL"},   {Op::DIVU, "DIVU"}, {Op::AND, "AND"},
    {Op::OR, "OR"},     {Op::XOR, "XOR"},   {Op::SHL, "SHL"},   {Op::SHR, "SHR"},
    {Op::LD1, "LD1"},   {Op::LD2, "LD2"},   {Op::LD4, "LD4"},   {Op::LD8, "LD8"},
    {Op::ST1, "ST1"},   {Op::ST2, "ST2"},   {Op::ST4, "ST4"},   {Op::ST8, "ST8"},
    {Op::JMP, "JMP"},   {Op::BEQ, "BEQ"},   {Op::BNE, "BNE"},   {Op::BLTU, "BLTU"},
    {Op::BGEU, "BGEU"}, {Op::CALLX, "CALLX"},
};

}  // namespace

std::optional<Op> op_from_byte(std::uint8_t b) noexcept {
    for (const auto& info : kOps) {
        if (static_cast<std::uint8_t>(info.op) == b) return info.op;
    }
    return std::nullopt;
}

std::string_view op_name(Op op) noexcept {
    for (const auto& info : kOps) {
        if (info.op == op) return info.name;
    }
    return "?";
}

std::optional<Op> op_from_name(std::string_view name) noexcept {
    for (const auto& info : kOps) {
        if (info.name == name) return info.op;
    }
    return std::nullopt;
}

bool is_branch(Op op) noexcept {
    return op == Op::JMP || op == Op::BEQ || op == Op::BNE || op == Op::BLTU || op == Op::BGEU;
}
bool is_load(Op op) noexcept { return op >= Op::LD1 && op <= Op::LD8; }
bool is_store(Op op) noexcept { return op >= Op::ST1 && op <= Op::ST8; }

unsigned access_width(Op op) noexcept {
    const auto base = is_load(op) ? static_cast<unsigned>(Op::LD1) : static_cast<unsigned>(Op::ST1);
    return 1u << (static_cast<unsigned>(op) - base);
}

void encode_instruction(const Instruction& in, std::uint8_t* dst) noexcept {
    dst[0] = static_cast<std::uint8_t>(in.op);
    dst[1] = in.rd;
    dst[2] = in.rs1;
    dst[3] = in.rs2;
    store_le<std::uint32_t>(dst + 4, static_cast<std::uint32_t>(in.imm));
}

Bytes encode_program(std::span<const Instruction> program) {
    Bytes out(program.size() * kInstructionSize);
    for (std::size_t i = 0; i < program.size(); ++i) {
        encode_instruction(program[i], out.data() + i * kInstructionSize);
    }
    return out;
}

CodeObject validate(ByteView code_bytes, std::size_t extern_count) {
    if (code_bytes.empty() || code_bytes.size() % kInstructionSize != 0) {
        throw Error(Errc::TruncatedCode, std::to_string(code_bytes.size()) + " bytes");
    }
    const std::size_t n = code_bytes.size() / kInstructionSize;
    CodeObject obj;
    obj.extern_count_ = extern_count;
    obj.instructions_.reserve(n);
    for (std::size_t pc = 0; pc < n; ++pc) {
        const std::uint8_t* p = code_bytes.data() + pc * kInstructionSize;
        const auto op = op_from_byte(p[0]);
        auto where = [pc] { return "at instruction " + std::to_string(pc); };
        if (!op) throw Error(Errc::BadOpcode, where());
        Instruction in{*op, p[1], p[2], p[3], static_cast<std::int32_t>(load_le<std::uint32_t>(p + 4))};

        const bool region_operand = is_load(in.op) || is_store(in.op);
        if (in.rd >= kRegisterCount || in.rs1 >= kRegisterCount) throw Error(Errc::BadOperand, where());
        if (region_operand ? in.rs2 > static_cast<std::uint8_t>(Region::scratch)
                           : in.rs2 >= kRegisterCount) {
            throw Error(Errc::BadOperand, where());
        }
        if (is_branch(in.op)) {
            const std::int64_t target = static_cast<std::int64_t>(pc) + in.imm;
            if (target < 0 || target >= static_cast<std::int64_t>(n)) {
                throw Error(Errc::BranchOutOfRange, where() + " -> " + std::to_string(target));
            }
        }
        if (in.op == Op::CALLX && (in.imm < 0 || static_cast<std::size_t>(in.imm) >= extern_count)) {
            throw Error(Errc::ExternIndexOutOfRange, where());
        }
        obj.instructions_.push_back(in);
    }
    return obj;
}

std::string_view trap_name(TrapReason r) noexcept {
    switch (r) {
    case TrapReason::OutOfBoundsAccess: return "OutOfBoundsAccess";
    case TrapReason::ReadOnlyViolation: return "ReadOnlyViolation";
    case TrapReason::DivideByZero: return "DivideByZero";
    case TrapReason::ExternalFailed: return "ExternalFailed";
    case TrapReason::InvalidHandle: return "InvalidHandle";
    }
    return "?";
}

std::string ExitStatus::describe() const {
    switch (kind) {
    case Kind::halted: return "halted";
    case Kind::fuel_exhausted: return "fuel_exhausted at pc " + std::to_string(pc);
    case Kind::trapped: {
        std::string s = "trapped(" + std::string(trap_name(trap));
        if (trap == TrapReason::ExternalFailed) s += " code " + std::to_string(extern_error);
        return s + ") at pc " + std::to_string(pc);
    }
    }
    return "?";
}

void ExecContext::reset_for_entry() noexcept {
    regs.fill(0);
    scratch.fill(0);
    regs[1] = payload.size();
    regs[2] = args.size();
}

namespace {

bool in_bounds(std::uint64_t addr, unsigned width, std::size_t size) noexcept {
    return addr <= size && width <= size - addr;
}

}  // namespace

ExitStatus execute(const CodeObject& code, ExecContext& ctx) {
    if (ctx.indirection.size() != code.extern_count()) {
        throw Error(Errc::InvalidArgument, "indirection table length differs from extern count");
    }
    const auto& prog = code.instructions();
    const std::size_t n = prog.size();
    auto& r = ctx.regs;
    ExitStatus st;
    std::size_t pc = 0;

    auto trap = [&](TrapReason reason, std::uint32_t ext = 0) {
        st.kind = ExitStatus::Kind::trapped;
        st.trap = reason;
        st.extern_error = ext;
        st.pc = pc;
        return st;
    };

    while (pc < n) {
        if (ctx.fuel == 0) {
            st.kind = ExitStatus::Kind::fuel_exhausted;
            st.pc = pc;
            return st;
        }
        --ctx.fuel;
        ++st.executed;
        const Instruction& in = prog[pc];
        std::size_t next = pc + 1;
        switch (in.op) {
        case Op::HALT:
            st.kind = ExitStatus::Kind::halted;
            st.pc = pc;
            return st;
        case Op::LDI: r[in.rd] = static_cast<std::uint64_t>(static_cast<std::int64_t>(in.imm)); break;
        case Op::MOV: r[in.rd] = r[in.rs1]; break;
        case Op::ADD: r[in.rd] = r[in.rs1] + r[in.rs2]; break;
        case Op::SUB: r[in.rd] = r[in.rs1] - r[in.rs2]; break;
        case Op::MUL: r[in.rd] = r[in.rs1] * r[in.rs2]; break;
        case Op::DIVU:
            if (r[in.rs2] == 0) return trap(TrapReason::DivideByZero);
            r[in.rd] = r[in.rs1] / r[in.rs2];
            break;
        case Op::AND: r[in.rd] = r[in.rs1] & r[in.rs2]; break;
        case Op::OR: r[in.rd] = r[in.rs1] | r[in.rs2]; break;
        case Op::XOR: r[in.rd] = r[in.rs1] ^ r[in.rs2]; break;
        case Op::SHL: r[in.rd] = r[in.rs1] << (r[in.rs2] & 63); break;
        case Op::SHR: r[in.rd] = r[in.rs1] >> (r[in.rs2] & 63); break;
        case Op::LD1:
        case Op::LD2:
        case Op::LD4:
        case Op::LD8:
        case Op::ST1:
        case Op::ST2:
        case Op::ST4:
        case Op::ST8: {
            const unsigned width = access_width(in.op);
            const std::uint64_t addr = r[in.rs1] + static_cast<std::uint64_t>(static_cast<std::int64_t>(in.imm));
            const auto region = static_cast<Region>(in.rs2);
            const std::uint8_t* src = nullptr;
            std::uint8_t* dst = nullptr;
            std::size_t size = 0;
            switch (region) {
            case Region::args:
                src = ctx.args.data();
                size = ctx.args.size();
                break;
            case Region::payload:
                src = ctx.payload.data();
                dst = ctx.payload_read_only ? nullptr : ctx.payload.data();
                size = ctx.payload.size();
                break;
            case Region::scratch:
                src = ctx.scratch.data();
                dst = ctx.scratch.data();
                size = ctx.scratch.size();
                break;
            }
            if (!in_bounds(addr, width, size)) return trap(TrapReason::OutOfBoundsAccess);
            if (is_load(in.op)) {
                std::uint64_t v = 0;
                for (unsigned i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(src[addr + i]) << (8 * i);
                r[in.rd] = v;
            } else {
                if (dst == nullptr) return trap(TrapReason::ReadOnlyViolation);
                const std::uint64_t v = r[in.rd];
                for (unsigned i = 0; i < width; ++i) dst[addr + i] = static_cast<std::uint8_t>(v >> (8 * i));
            }
            break;
        }
        case Op::JMP: next = pc + in.imm; break;
        case Op::BEQ:
            if (r[in.rs1] == r[in.rs2]) next = pc + in.imm;
            break;
        case Op::BNE:
            if (r[in.rs1] != r[in.rs2]) next = pc + in.imm;
            break;
        case Op::BLTU:
            if (r[in.rs1] < r[in.rs2]) next = pc + in.imm;
            break;
        case Op::BGEU:
            if (r[in.rs1] >= r[in.rs2]) next = pc + in.imm;
            break;
        case Op::CALLX: {
            if (ctx.host == nullptr) return trap(TrapReason::InvalidHandle);
            ExternCall call;
            for (std::size_t i = 0; i < kMaxCallArgs; ++i) call.argv[i] = r[i + 1];
            call.args = ctx.args;
            call.payload = ctx.payload;
            const auto res = ctx.host->invoke(ctx.indirection[static_cast<std::size_t>(in.imm)], call);
            if (!res) return trap(TrapReason::InvalidHandle);
            if (res->error != 0) return trap(TrapReason::ExternalFailed, res->error);
            r[in.rd] = res->value;
            break;
        }
        }
        pc = next;
    }
    // Running off the end is an implicit HALT.
    st.kind = ExitStatus::Kind::halted;
    st.pc = pc;
    return st;
}

}  // namespace amrt::picvm
