#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>

#include "unicon/server_config.hpp"
#include "unicon/session.hpp"

namespace unicon {

struct ServerStats {
    std::uint64_t ticks = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t clients = 0;        ///< currently connected
    std::uint64_t dropped_clients = 0;  ///< disconnected for a full send queue
    std::uint64_t rejected_messages = 0;  ///< undecodable or over the inbound bound
};

/// Websocket session service. One tick thread owns the session; one I/O thread runs the
/// sockets. They exchange messages through bounded queues.
class Server {
public:
    Server(Session session, ServerConfig config, std::ostream* log = nullptr);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds both ports and starts the threads. Throws Error when a port is taken.
    void start();
    /// Closes every connection and joins the threads. Idempotent.
    void stop();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();

    int port() const;
    int udp_port() const;
    bool running() const;
    ServerStats stats() const;

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace unicon
