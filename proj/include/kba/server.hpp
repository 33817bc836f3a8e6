#pragma once

#include "kba/engine.hpp"
#include "kba/gateway.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace kba {

/// Builds the transport named in the config (fake, maildir or webhook).
std::unique_ptr<TransportAdapter> make_adapter(const GatewayConfig& config);

struct ServerOptions {
    std::string bind = "127.0.0.1";
    /// 0 picks a free port.
    int port = 8080;
    /// Background ingest period; zero disables the poller.
    std::chrono::milliseconds poll_interval{30000};
    /// Longest quiet stretch on the event stream before a keep-alive comment.
    std::chrono::milliseconds keepalive{15000};
};

/// JSON over HTTP under /v1 plus a server-sent event stream at /v1/events.
class Server {
public:
    Server(Engine& engine, Gateway& gateway, ServerOptions options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and serves on background threads. Returns the bound port.
    int start();
    void stop();
    /// Blocks until stop() is called from elsewhere.
    void wait();
    int port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Engine + adapter + gateway + server wired from one config, as `kba serve` runs it.
class Service {
public:
    explicit Service(Engine& engine, std::optional<ServerOptions> options = std::nullopt);
    ~Service();

    int start() { return server_->start(); }
    void stop() { server_->stop(); }
    void wait() { server_->wait(); }
    Gateway& gateway() noexcept { return *gateway_; }
    TransportAdapter& adapter() noexcept { return *adapter_; }

private:
    std::unique_ptr<TransportAdapter> adapter_;
    std::unique_ptr<Gateway> gateway_;
    std::unique_ptr<Server> server_;
};

} // namespace kba
