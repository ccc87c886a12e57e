#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "amrt/linkpkg.hpp"
#include "amrt/testpkg.hpp"
#include "test_util.hpp"

using namespace amrt;
using namespace amrt::linkpkg;

namespace {

// Reference FNV-1a 64, written out separately from the library's constexpr version.
std::uint64_t fnv_oracle(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

picvm::HostFn returns(std::uint64_t v) {
    return [v](const picvm::ExternCall&) { return picvm::ExternResult::ok(v); };
}

}  // namespace

TEST(Fnv, KnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    for (const char* s : {"ipt_copy", "ipt_hash_put", "ssum_store", "x"}) EXPECT_EQ(fnv1a64(s), fnv_oracle(s));
}

TEST(Assemble, Halt) {
    const auto f = assemble_jam("HALT");
    EXPECT_EQ(f.code.size(), 8u);
    EXPECT_TRUE(f.extern_names.empty());
}

TEST(Assemble, ExternOrderAndCallxIndex) {
    const auto f = assemble_jam(".extern b\n.extern a\nCALLX r0, a\nCALLX r1, b\nHALT\n");
    EXPECT_EQ(f.extern_names, (std::vector<std::string>{"b", "a"}));
    const auto code = picvm::validate(f.code, 2);
    EXPECT_EQ(code.instructions()[0].op, picvm::Op::CALLX);
    EXPECT_EQ(code.instructions()[0].imm, 1);
    EXPECT_EQ(code.instructions()[1].imm, 0);
    EXPECT_EQ(code.instructions()[1].rd, 1);
}

TEST(Assemble, ShippedJams) {
    const auto ssum = assemble_jam(testpkg::ssum_source());
    EXPECT_EQ(ssum.extern_names, std::vector<std::string>{"ssum_store"});
    const auto ipt = assemble_jam(testpkg::ipt_source());
    EXPECT_EQ(ipt.extern_names, (std::vector<std::string>{"ipt_hash_put", "ipt_copy"}));
    EXPECT_NO_THROW(picvm::validate(ipt.code, 2));
}

TEST(Assemble, LabelsResolveToRelativeOffsets) {
    const auto f = assemble_jam("top: LDI r1, 1\n  BEQ r1, r0, top\n  JMP end\n  HALT\nend: HALT\n");
    const auto code = picvm::validate(f.code, 0);
    EXPECT_EQ(code.instructions()[1].imm, -1);
    EXPECT_EQ(code.instructions()[2].imm, 2);
}

TEST(Assemble, MemoryOperandsAndComments) {
    const auto f = assemble_jam("LD4 r3, payload[r4+8] ; comment\n# full line\nST8 r3, scratch[r0-0x10]\nHALT");
    const auto code = picvm::validate(f.code, 0);
    const auto& ld = code.instructions()[0];
    EXPECT_EQ(ld.op, picvm::Op::LD4);
    EXPECT_EQ(ld.rd, 3);
    EXPECT_EQ(ld.rs1, 4);
    EXPECT_EQ(ld.rs2, static_cast<std::uint8_t>(picvm::Region::payload));
    EXPECT_EQ(ld.imm, 8);
    const auto& st = code.instructions()[1];
    EXPECT_EQ(st.rs2, static_cast<std::uint8_t>(picvm::Region::scratch));
    EXPECT_EQ(st.imm, -16);
}

TEST(Assemble, Errors) {
    EXPECT_ERRC(assemble_jam("FROB r1"), Errc::UnknownMnemonic);
    EXPECT_ERRC(assemble_jam("a: HALT\na: HALT"), Errc::DuplicateLabel);
    EXPECT_ERRC(assemble_jam("JMP nowhere"), Errc::UndefinedLabel);
    EXPECT_ERRC(assemble_jam("CALLX r0, ghost\nHALT"), Errc::UndeclaredExtern);
    EXPECT_ERRC(assemble_jam("ADD r1, r2"), Errc::ParseError);
    EXPECT_ERRC(assemble_jam("LDI r99, 1"), Errc::ParseError);
}

TEST(Package, IdsInSortedNameOrder) {
    const auto built = testpkg::build_test_package();
    ASSERT_EQ(built.package.elements.size(), 2u);
    EXPECT_EQ(built.package.find("ipt")->element_id, 0);
    EXPECT_EQ(built.package.find("ssum")->element_id, 1);
    EXPECT_EQ(built.package.find(std::uint16_t{1})->name, "ssum");
    EXPECT_EQ(built.package.find("none"), nullptr);
}

TEST(Package, SingleSourceGetsIdZero) {
    const auto built = build_package("one", {{"jam_only.amc", "HALT"}});
    EXPECT_EQ(built.package.elements.at(0).element_id, 0);
    EXPECT_EQ(built.package.elements.at(0).name, "only");
}

TEST(Package, RoundTripIsBitExact) {
    const auto built = testpkg::build_test_package();
    const Package loaded = load_package(built.bytes);
    EXPECT_EQ(loaded.name, "test");
    ASSERT_EQ(loaded.elements.size(), built.package.elements.size());
    for (std::size_t i = 0; i < loaded.elements.size(); ++i) {
        EXPECT_EQ(loaded.elements[i].element_id, built.package.elements[i].element_id);
        EXPECT_EQ(loaded.elements[i].name, built.package.elements[i].name);
        EXPECT_EQ(loaded.elements[i].extern_names, built.package.elements[i].extern_names);
        EXPECT_EQ(loaded.elements[i].code, built.package.elements[i].code);
    }
    EXPECT_EQ(serialize_package(loaded), built.bytes);
}

TEST(Package, FileLayout) {
    const auto built = build_package("p", {{"jam_h.amc", ".extern x\nHALT"}});
    const Bytes& b = built.bytes;
    const Bytes expect = {'2', 'C', 'P', 'K', 1, 0,   1, 0, 'p', 1, 0,  // magic, version, name, count
                          0,   0,   1,   0,   'h',               // id, name
                          1,   0,   1,   0,   'x',               // extern count, name
                          8,   0,   0,   0,   0, 0, 0,   0, 0,   0, 0, 0};
    EXPECT_EQ(b, expect);
}

TEST(Package, Manifest) {
    const auto built = testpkg::build_test_package();
    const auto ipt = built.package.find("ipt");
    const auto ssum = built.package.find("ssum");
    const std::string expect = "0 ipt " + std::to_string(ipt->code.size()) + " ipt_hash_put,ipt_copy\n1 ssum " +
                               std::to_string(ssum->code.size()) + " ssum_store\n";
    EXPECT_EQ(built.manifest, expect);
    EXPECT_EQ(build_package("n", {{"jam_h.amc", "HALT"}}).manifest, "0 h 8 -\n");
}

TEST(Package, BuildErrors) {
    EXPECT_ERRC(build_package("d", {{"jam_a.amc", "HALT"}, {"jam_a.amc", "HALT"}}), Errc::DuplicateElementName);
    try {
        build_package("e", {{"jam_bad.amc", "NOPE"}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::AssembleError);
        EXPECT_NE(std::string(e.what()).find("jam_bad.amc"), std::string::npos);
    }
    EXPECT_ERRC(element_name_from_filename("ssum.amc"), Errc::InvalidArgument);
    EXPECT_EQ(element_name_from_filename("jam_ssum.amc"), "ssum");
}

TEST(Package, TruncatedAndTampered) {
    const auto built = testpkg::build_test_package();
    EXPECT_ERRC(load_package(ByteView(built.bytes).first(3)), Errc::BadPackageMagic);
    for (std::size_t cut = 4; cut < built.bytes.size(); cut += 7) {
        try {
            load_package(ByteView(built.bytes).first(cut));
            FAIL() << cut;
        } catch (const Error& e) {
            EXPECT_TRUE(e.code() == Errc::BadPackageMagic || e.code() == Errc::CorruptElement) << e.what();
        }
    }
    Bytes bad_magic = built.bytes;
    bad_magic[1] = 'X';
    EXPECT_ERRC(load_package(bad_magic), Errc::BadPackageMagic);

    // Flip the first opcode of the last element's code to an undefined value.
    Bytes tampered = built.bytes;
    const auto& last = built.package.elements.back();
    const std::size_t code_start = tampered.size() - last.code.size();
    tampered[code_start] = 0xEE;
    EXPECT_ERRC(load_package(tampered), Errc::ValidationFailed);

    Bytes trailing = built.bytes;
    trailing.push_back(0);
    EXPECT_ERRC(load_package(trailing), Errc::CorruptElement);
}

TEST(Package, ReadsJamDirectory) {
    const auto dir = std::filesystem::temp_directory_path() / "amrt_jams_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "jam_b.amc") << "HALT\n";
    std::ofstream(dir / "jam_a.amc") << "HALT\n";
    std::ofstream(dir / "notes.txt") << "ignored\n";
    const auto sources = read_jam_sources(dir.string());
    EXPECT_EQ(sources.size(), 2u);
    const auto built = build_package("dir", sources);
    EXPECT_EQ(built.package.find("a")->element_id, 0);
    std::filesystem::remove_all(dir);
}

TEST(Symbols, HandlesStartAtOneAndAreNeverReused) {
    SymbolTable t;
    const auto h1 = t.register_symbol("f", returns(1));
    EXPECT_EQ(h1, 1u);
    const auto h2 = t.register_symbol("g", returns(2));
    EXPECT_NE(h1, h2);
    const auto h3 = t.register_symbol("f", returns(3));
    EXPECT_NE(h3, h1);
    EXPECT_NE(h3, h2);
    EXPECT_EQ(t.lookup("f"), h3);
    EXPECT_FALSE(t.invoke(h1, {}).has_value());
    EXPECT_EQ(t.invoke(h3, {})->value, 3u);
    EXPECT_EQ(t.name_of(h3), "f");
    EXPECT_FALSE(t.name_of(h1).has_value());
    EXPECT_EQ(t.lookup_hash(fnv1a64("g")), h2);
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.generation(), 3u);
    EXPECT_FALSE(t.lookup("missing").has_value());
    EXPECT_FALSE(t.invoke(0, {}).has_value());
}

TEST(Symbols, EmptyNameRejected) {
    SymbolTable t;
    EXPECT_ERRC(t.register_symbol("", returns(0)), Errc::InvalidArgument);
}

TEST(Handshake, ResolveOverControlChannel) {
    transport::Node receiver("rx");
    SymbolTable t;
    const auto h = t.register_symbol("ssum_store", returns(0));
    install_resolve_handler(receiver, t);
    transport::ShmEndpoint ep(receiver);
    EXPECT_TRUE(resolve_symbols(ep, {}).empty());
    EXPECT_EQ(resolve_symbols(ep, {"ssum_store"}), std::vector<std::uint64_t>{h});
    try {
        resolve_symbols(ep, {"ssum_store", "nope"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnresolvedSymbol);
        EXPECT_EQ(e.detail(), "nope");
    }
}

TEST(Handshake, ResolveAfterReplaceReturnsNewHandle) {
    transport::Node receiver("rx");
    SymbolTable t;
    const auto old_h = t.register_symbol("f", returns(0));
    install_resolve_handler(receiver, t);
    transport::ShmEndpoint ep(receiver);
    PeerLinkCache cache;
    cache.resolve_missing(ep, {"f"});
    EXPECT_EQ(cache.get("f"), old_h);
    const auto new_h = t.register_symbol("f", returns(1));
    cache.clear();
    cache.resolve_missing(ep, {"f"});
    EXPECT_EQ(cache.get("f"), new_h);
}

TEST(Patch, SenderAndReceiverTables) {
    PeerLinkCache cache;
    EXPECT_TRUE(patch_got({}, &cache, PatchMode::sender).empty());
    cache.set("a", 7);
    cache.set("b", 9);
    EXPECT_EQ(patch_got({"a", "b"}, &cache, PatchMode::sender), (IndirectionTable{7, 9}));
    EXPECT_EQ(patch_got({"b", "a"}, &cache, PatchMode::sender), (IndirectionTable{9, 7}));
    EXPECT_ERRC(patch_got({"a", "c"}, &cache, PatchMode::sender), Errc::UnresolvedSymbol);
    EXPECT_EQ(patch_got({"ipt_copy"}, nullptr, PatchMode::receiver),
              IndirectionTable{fnv_oracle("ipt_copy")});
}

TEST(Patch, ReceiverPatchReplacesHashes) {
    SymbolTable t;
    const auto ha = t.register_symbol("a", returns(0));
    const auto hb = t.register_symbol("b", returns(0));
    IndirectionTable entries = {fnv_oracle("b"), fnv_oracle("a")};
    apply_receiver_patch(entries, t);
    EXPECT_EQ(entries, (IndirectionTable{hb, ha}));
    IndirectionTable unknown = {fnv_oracle("zzz")};
    EXPECT_ERRC(apply_receiver_patch(unknown, t), Errc::UnknownSymbolHash);
    EXPECT_EQ(resolve_local({"a", "b"}, t), (IndirectionTable{ha, hb}));
    EXPECT_ERRC(resolve_local({"q"}, t), Errc::UnresolvedSymbol);
}

TEST(Ried, InstallRegistersEverySymbol) {
    testpkg::TestHost host;
    for (const char* n : {"ssum_store", "ipt_hash_put", "ipt_copy"}) EXPECT_TRUE(host.symbols.lookup(n)) << n;
}
