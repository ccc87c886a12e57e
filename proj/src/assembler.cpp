#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>

#include "amrt/linkpkg.hpp"

namespace amrt::linkpkg {

namespace {

using picvm::Instruction;
using picvm::Op;

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
    return out;
}

bool is_ident(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '.'; });
}

// One source line reduced to its statement.
struct Line {
    std::size_t number;
    std::string mnemonic;
    std::vector<std::string> operands;
};

class Assembler {
public:
    JamFragment run(std::string_view source) {
        collect(source);
        std::vector<Instruction> program;
        program.reserve(lines_.size());
        for (std::size_t pc = 0; pc < lines_.size(); ++pc) program.push_back(encode(lines_[pc], pc));
        JamFragment out;
        out.code = picvm::encode_program(program);
        out.extern_names = externs_;
        picvm::validate(out.code, out.extern_names.size());
        return out;
    }

private:
    [[noreturn]] void fail(Errc code, std::size_t line, const std::string& what) const {
        throw Error(code, "line " + std::to_string(line) + ": " + what);
    }

    void collect(std::string_view source) {
        std::size_t number = 0;
        while (!source.empty()) {
            ++number;
            const auto nl = source.find('\n');
            std::string_view raw = source.substr(0, nl);
            source = nl == std::string_view::npos ? std::string_view{} : source.substr(nl + 1);
            const auto comment = raw.find_first_of(";#");
            std::string_view text = trim(raw.substr(0, comment));

            // Labels (possibly several) before an optional statement.
            while (true) {
                const auto colon = text.find(':');
                if (colon == std::string_view::npos) break;
                const std::string_view label = trim(text.substr(0, colon));
                if (!is_ident(label)) fail(Errc::ParseError, number, "bad label '" + std::string(label) + "'");
                if (!labels_.emplace(std::string(label), lines_.size()).second) {
                    fail(Errc::DuplicateLabel, number, std::string(label));
                }
                text = trim(text.substr(colon + 1));
            }
            if (text.empty()) continue;

            if (text.front() == '.') {
                directive(text, number);
                continue;
            }
            const auto sp = text.find_first_of(" \t");
            Line line{number, upper(text.substr(0, sp)), {}};
            std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(text.substr(sp));
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                const std::string_view op = trim(rest.substr(0, comma));
                if (op.empty()) fail(Errc::ParseError, number, "empty operand");
                line.operands.emplace_back(op);
                if (comma == std::string_view::npos) break;
                rest = trim(rest.substr(comma + 1));
                if (rest.empty()) fail(Errc::ParseError, number, "trailing comma");
            }
            lines_.push_back(std::move(line));
        }
    }

    void directive(std::string_view text, std::size_t number) {
        const auto sp = text.find_first_of(" \t");
        const std::string name = upper(text.substr(0, sp));
        const std::string_view arg = sp == std::string_view::npos ? std::string_view{} : trim(text.substr(sp));
        if (name != ".EXTERN") fail(Errc::ParseError, number, "unknown directive " + name);
        if (!is_ident(arg)) fail(Errc::ParseError, number, ".extern needs a symbol name");
        if (std::find(externs_.begin(), externs_.end(), arg) == externs_.end()) {
            if (externs_.size() >= 0xFFFF) fail(Errc::ParseError, number, "too many externs");
            externs_.emplace_back(arg);
        }
    }

    void arity(const Line& l, std::size_t n) const {
        if (l.operands.size() != n) {
            fail(Errc::ParseError, l.number,
                 l.mnemonic + " takes " + std::to_string(n) + " operand(s), got " + std::to_string(l.operands.size()));
        }
    }

    std::uint8_t reg(const Line& l, const std::string& s) const {
        if (s.size() >= 2 && (s[0] == 'r' || s[0] == 'R')) {
            unsigned v = 0;
            const auto* end = s.data() + s.size();
            auto [p, ec] = std::from_chars(s.data() + 1, end, v);
            if (ec == std::errc{} && p == end && v < picvm::kRegisterCount) return static_cast<std::uint8_t>(v);
        }
        fail(Errc::ParseError, l.number, "expected register r0..r15, got '" + s + "'");
    }

    std::optional<std::int64_t> number(std::string_view s) const {
        bool neg = false;
        if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
            neg = s[0] == '-';
            s.remove_prefix(1);
        }
        int base = 10;
        if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
            base = 16;
            s.remove_prefix(2);
        }
        if (s.empty()) return std::nullopt;
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
        if (ec != std::errc{} || p != s.data() + s.size() || v > (1ULL << 32)) return std::nullopt;
        return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
    }

    std::int32_t imm32(const Line& l, const std::string& s) const {
        const auto v = number(s);
        if (!v || *v < INT32_MIN || *v > INT32_MAX) fail(Errc::ParseError, l.number, "bad immediate '" + s + "'");
        return static_cast<std::int32_t>(*v);
    }

    std::int32_t target(const Line& l, const std::string& s, std::size_t pc) const {
        if (is_ident(s)) {
            auto it = labels_.find(s);
            if (it == labels_.end()) fail(Errc::UndefinedLabel, l.number, s);
            return static_cast<std::int32_t>(static_cast<std::int64_t>(it->second) - static_cast<std::int64_t>(pc));
        }
        return imm32(l, s);
    }

    // region[rN], region[rN+imm], region[rN-imm]
    void memory(const Line& l, const std::string& s, Instruction& in) const {
        const auto open = s.find('[');
        if (open == std::string::npos || s.back() != ']') fail(Errc::ParseError, l.number, "expected region[rN+imm]");
        const std::string region = std::string(trim(std::string_view(s).substr(0, open)));
        if (region == "args") {
            in.rs2 = static_cast<std::uint8_t>(picvm::Region::args);
        } else if (region == "payload") {
            in.rs2 = static_cast<std::uint8_t>(picvm::Region::payload);
        } else if (region == "scratch") {
            in.rs2 = static_cast<std::uint8_t>(picvm::Region::scratch);
        } else {
            fail(Errc::ParseError, l.number, "unknown region '" + region + "'");
        }
        const std::string_view inner = trim(std::string_view(s).substr(open + 1, s.size() - open - 2));
        const auto sign = inner.find_first_of("+-");
        in.rs1 = reg(l, std::string(trim(inner.substr(0, sign))));
        in.imm = 0;
        if (sign != std::string_view::npos) {
            const std::string_view off = trim(inner.substr(sign + 1));
            std::string text = (inner[sign] == '-' ? "-" : "") + std::string(off);
            in.imm = imm32(l, text);
        }
    }

    Instruction encode(const Line& l, std::size_t pc) const {
        const auto op = picvm::op_from_name(l.mnemonic);
        if (!op) fail(Errc::UnknownMnemonic, l.number, l.mnemonic);
        Instruction in{*op, 0, 0, 0, 0};
        const auto& o = l.operands;
        switch (*op) {
        case Op::HALT: arity(l, 0); break;
        case Op::LDI:
            arity(l, 2);
            in.rd = reg(l, o[0]);
            in.imm = imm32(l, o[1]);
            break;
        case Op::MOV:
            arity(l, 2);
            in.rd = reg(l, o[0]);
            in.rs1 = reg(l, o[1]);
            break;
        case Op::ADD: case Op::SUB: case Op::MUL: case Op::DIVU: case Op::AND:
        case Op::OR: case Op::XOR: case Op::SHL: case Op::SHR:
            arity(l, 3);
            in.rd = reg(l, o[0]);
            in.rs1 = reg(l, o[1]);
            in.rs2 = reg(l, o[2]);
            break;
        case Op::LD1: case Op::LD2: case Op::LD4: case Op::LD8:
        case Op::ST1: case Op::ST2: case Op::ST4: case Op::ST8:
            arity(l, 2);
            in.rd = reg(l, o[0]);
            memory(l, o[1], in);
            break;
        case Op::JMP:
            arity(l, 1);
            in.imm = target(l, o[0], pc);
            break;
        case Op::BEQ: case Op::BNE: case Op::BLTU: case Op::BGEU:
            arity(l, 3);
            in.rs1 = reg(l, o[0]);
            in.rs2 = reg(l, o[1]);
            in.imm = target(l, o[2], pc);
            break;
        case Op::CALLX: {
            arity(l, 2);
            in.rd = reg(l, o[0]);
            auto it = std::find(externs_.begin(), externs_.end(), o[1]);
            if (it == externs_.end()) fail(Errc::UndeclaredExtern, l.number, o[1]);
            in.imm = static_cast<std::int32_t>(it - externs_.begin());
            break;
        }
        }
        return in;
    }

    std::vector<Line> lines_;
    std::map<std::string, std::size_t, std::less<>> labels_;
    std::vector<std::string> externs_;
};

}  // namespace

JamFragment assemble_jam(std::string_view source) { return Assembler{}.run(source); }

}  // namespace amrt::linkpkg
