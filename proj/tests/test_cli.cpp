#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "amrt/linkpkg.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result sh(const std::string& args) {
    const std::string cmd = std::string(AMRT_TOOL_PATH) + " " + args + " 2>&1";
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[512];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("amrt_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d / name;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    const auto r = sh("--help");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("pkg-build"), std::string::npos);
    EXPECT_EQ(sh("bench --help").code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(sh("").code, 1);
    EXPECT_EQ(sh("bench --no-such-flag").code, 1);
    EXPECT_EQ(sh("bench --shape burst").code, 1);
    EXPECT_EQ(sh("bench --iters 10").code, 1);
    EXPECT_EQ(sh("bench --transport shm --peer 127.0.0.1:1").code, 1);
}

TEST(Cli, PkgBuildWritesPackageAndManifest) {
    const fs::path out = scratch("test.pkg");
    const auto r = sh("pkg-build " + std::string(AMRT_TEST_PACKAGE_DIR) + " -o " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_TRUE(fs::exists(out));
    std::ifstream in(out, std::ios::binary);
    const amrt::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pkg = amrt::linkpkg::load_package(bytes);
    ASSERT_TRUE(pkg.find("ssum"));
    ASSERT_TRUE(pkg.find("ipt"));
    std::ifstream m(out.string() + ".manifest");
    std::stringstream ss;
    ss << m.rdbuf();
    EXPECT_NE(ss.str().find("ssum_store"), std::string::npos);
    EXPECT_NE(ss.str().find("ipt_hash_put"), std::string::npos);
}

TEST(Cli, PkgBuildRejectsBadSource) {
    const fs::path dir = scratch("badsrc");
    fs::create_directories(dir);
    std::ofstream(dir / "jam_bad.amc") << "FROB r1\n";
    const auto r = sh("pkg-build " + dir.string() + " -o " + scratch("bad.pkg").string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.out.find("jam_bad.amc"), std::string::npos) << r.out;
}

TEST(Cli, BenchInProcessWritesCsv) {
    const fs::path csv = scratch("run.csv");
    const auto r = sh("bench --shape pingpong --func ssum --mode local --payload-sizes 4,64 --warmup 10 --iters 1000 "
                      "--csv " + csv.string());
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream f(csv);
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) ++lines;
    EXPECT_EQ(lines, 3);
}

TEST(Cli, ServeAndRemoteBench) {
    FILE* server = popen((std::string(AMRT_TOOL_PATH) + " serve --listen 127.0.0.1:0 --frame-size 1024 "
                                                        "--sessions 2 --duration 60 2>&1")
                             .c_str(),
                         "r");
    ASSERT_TRUE(server);
    char buf[256];
    ASSERT_TRUE(std::fgets(buf, sizeof buf, server));
    const std::string first(buf);
    ASSERT_EQ(first.rfind("listening on ", 0), 0u) << first;
    std::string addr = first.substr(13);
    while (!addr.empty() && std::isspace(static_cast<unsigned char>(addr.back()))) addr.pop_back();

    const auto res = sh("resolve --peer " + addr + " ssum_store ipt_copy");
    EXPECT_EQ(res.code, 0) << res.out;
    EXPECT_NE(res.out.find("ssum_store "), std::string::npos);

    const auto r = sh("bench --transport tcp --peer " + addr +
                      " --func ipt --mode injected --payload-sizes 64 --warmup 10 --iters 1000");
    EXPECT_EQ(r.code, 0) << r.out;

    while (std::fgets(buf, sizeof buf, server)) {
    }
    EXPECT_EQ(WEXITSTATUS(pclose(server)), 0);
}

TEST(Cli, RemotePeerRefusedIsRuntimeError) {
    EXPECT_EQ(sh("resolve --peer 127.0.0.1:1 ssum_store").code, 2);
}
