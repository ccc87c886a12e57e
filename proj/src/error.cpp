#include "amrt/error.hpp"

namespace amrt {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::Ok: return "Ok";
    case Errc::SizeOverflow: return "SizeOverflow";
    case Errc::FrameTooLarge: return "FrameTooLarge";
    case Errc::EncodeError: return "EncodeError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadVersion: return "BadVersion";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InjectedFlagViolation: return "InjectedFlagViolation";
    case Errc::BadOpcode: return "BadOpcode";
    case Errc::BadOperand: return "BadOperand";
    case Errc::BranchOutOfRange: return "BranchOutOfRange";
    case Errc::ExternIndexOutOfRange: return "ExternIndexOutOfRange";
    case Errc::TruncatedCode: return "TruncatedCode";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownMnemonic: return "UnknownMnemonic";
    case Errc::DuplicateLabel: return "DuplicateLabel";
    case Errc::UndefinedLabel: return "UndefinedLabel";
    case Errc::UndeclaredExtern: return "UndeclaredExtern";
    case Errc::DuplicateElementName: return "DuplicateElementName";
    case Errc::AssembleError: return "AssembleError";
    case Errc::BadPackageMagic: return "BadPackageMagic";
    case Errc::CorruptElement: return "CorruptElement";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::UnresolvedSymbol: return "UnresolvedSymbol";
    case Errc::UnknownSymbolHash: return "UnknownSymbolHash";
    case Errc::HashCollision: return "HashCollision";
    case Errc::NotSignaled: return "NotSignaled";
    case Errc::Timeout: return "Timeout";
    case Errc::BadKey: return "BadKey";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::PeerDisconnected: return "PeerDisconnected";
    case Errc::MalformedControlMessage: return "MalformedControlMessage";
    case Errc::UnknownElementId: return "UnknownElementId";
    case Errc::ExecutionTrapped: return "ExecutionTrapped";
    case Errc::TableFull: return "TableFull";
    case Errc::EmptySamples: return "EmptySamples";
    case Errc::ZeroTypical: return "ZeroTypical";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace amrt
