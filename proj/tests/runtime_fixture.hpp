#pragma once

// An initiator and a receiver in one process, joined by shared-memory
// endpoints. Tests drive the receiver with poll_once() on their own thread,
// or start a serve thread.

#include <memory>
#include <thread>

#include "amrt/runtime.hpp"
#include "amrt/testpkg.hpp"

namespace amrt::fixture {

struct Pair {
    transport::Node rx{"rx"};
    transport::Node tx{"tx"};
    testpkg::TestHost rx_host;
    testpkg::TestHost tx_host;
    linkpkg::Package pkg;
    std::unique_ptr<runtime::AmServer> server;
    transport::ShmEndpoint to_rx{rx};
    transport::ShmEndpoint to_tx{tx};
    std::unique_ptr<runtime::AmClient> client;
    std::jthread serve_thread;

    explicit Pair(runtime::ServerConfig scfg = {}, runtime::ClientConfig ccfg = {},
                  linkpkg::Package package = testpkg::build_test_package().package)
        : pkg(std::move(package)) {
        server = std::make_unique<runtime::AmServer>(rx, rx_host.symbols, scfg);
        server->load_package(pkg);
        server->set_peer(&to_tx);
        client = std::make_unique<runtime::AmClient>(tx, to_rx, tx_host.symbols, ccfg);
        client->connect();
        client->load_package(pkg);
    }

    ~Pair() { stop(); }

    void start() {
        serve_thread = std::jthread([this](std::stop_token st) { server->serve_loop(st); });
    }
    void stop() {
        if (serve_thread.joinable()) {
            serve_thread.request_stop();
            serve_thread.join();
        }
    }

    bool poll() { return server->poll_once(std::chrono::seconds(1)); }

    const linkpkg::Element& element(const char* name) const { return *pkg.find(name); }

    transport::Region& mailbox() { return rx.region(server->mailbox_region().region_id); }
};

}  // namespace amrt::fixture
