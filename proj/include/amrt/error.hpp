#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace amrt {

// Every failure the runtime can surface. Values are stable: they travel in
// control replies and error frames.
enum class Errc : std::uint16_t {
    Ok = 0,
    // wire
    SizeOverflow = 1,
    FrameTooLarge,
    EncodeError,
    BadMagic,
    BadVersion,
    LengthMismatch,
    InjectedFlagViolation,
    // picvm
    BadOpcode = 20,
    BadOperand,
    BranchOutOfRange,
    ExternIndexOutOfRange,
    TruncatedCode,
    // linkpkg
    ParseError = 40,
    UnknownMnemonic,
    DuplicateLabel,
    UndefinedLabel,
    UndeclaredExtern,
    DuplicateElementName,
    AssembleError,
    BadPackageMagic,
    CorruptElement,
    ValidationFailed,
    UnresolvedSymbol,
    UnknownSymbolHash,
    HashCollision,
    // mailbox
    NotSignaled = 60,
    Timeout,
    // transport
    BadKey = 80,
    OutOfBounds,
    PeerDisconnected,
    MalformedControlMessage,
    // runtime
    UnknownElementId = 100,
    ExecutionTrapped,
    // testpkg
    TableFull = 120,
    // bench
    EmptySamples = 140,
    ZeroTypical,
    // general
    InvalidArgument = 200,
    IoError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + (detail.empty() ? "" : ": " + detail)),
          code_(code), detail_(detail) {}
    explicit Error(Errc code) : Error(code, std::string()) {}

    Errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

}  // namespace amrt
