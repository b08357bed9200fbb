#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace unicon {

inline constexpr std::string_view kVersion = "0.1.0";

struct ServerConfig {
    std::string address = "127.0.0.1";
    int port = 8765;                    ///< websocket and HTTP; 0 picks a free port
    int udp_port = 8766;                ///< pose datagrams; 0 picks a free port, -1 disables
    double tick_rate = 60.0;            ///< Hz
    std::size_t inbound_capacity = 1024;  ///< client messages waiting for the tick thread
    std::size_t send_queue = 64;          ///< frames queued per client before it is dropped

    void validate() const;
};

}  // namespace unicon
