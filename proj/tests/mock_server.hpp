#pragma once

#include <httplib.h>

#include <stdexcept>
#include <string>
#include <thread>

namespace kba::test {

/// httplib server on a free loopback port, serving on a background thread.
class MockServer {
public:
    MockServer() = default;
    ~MockServer() { stop(); }

    httplib::Server& http() { return server_; }

    void start() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw std::runtime_error("mock server: bind failed");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }
    int port() const { return port_; }
    std::string url(const std::string& prefix = "") const {
        return "http://127.0.0.1:" + std::to_string(port_) + prefix;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace kba::test
