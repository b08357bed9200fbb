#include "unicon/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "unicon/error.hpp"

namespace unicon {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using udp = net::ip::udp;

namespace {

using Text = std::shared_ptr<const std::string>;

Text text(std::string s) { return std::make_shared<const std::string>(std::move(s)); }

/// Seq of an undecodable message when it can still be read, else 0.
std::uint64_t salvage_seq(std::string_view bytes) {
    const auto j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_object() && j.contains("seq") && j["seq"].is_number_unsigned()) return j["seq"].get<std::uint64_t>();
    return 0;
}

struct Inbound {
    std::uint64_t client = 0;
    Message message;
};

}  // namespace

class Client;

struct Server::Impl {
    Session session;
    ServerConfig config;
    std::ostream* log;
    std::shared_ptr<PoseBuffer> poses;
    Text library;

    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    udp::socket datagrams{ioc};
    std::array<char, 65536> datagram{};
    udp::endpoint sender;
    std::map<std::uint64_t, std::shared_ptr<Client>> clients;  // I/O thread only
    std::uint64_t next_client = 1;
    int bound_port = -1;
    int bound_udp = -1;

    std::mutex inbound_mutex;
    std::deque<Inbound> inbound;

    std::mutex state_mutex;
    std::condition_variable state_cv;
    bool running = false;
    bool stopping = false;
    std::thread io_thread;
    std::thread tick_thread;

    std::mutex log_mutex;
    std::atomic<std::uint64_t> ticks{0}, frames_sent{0}, connected{0}, dropped{0}, rejected{0};

    Impl(Session s, ServerConfig c, std::ostream* l)
        : session(std::move(s)), config(std::move(c)), log(l), poses(session.pose_buffer()) {
        library = text(serialize({0, session.library()}));
    }

    void note(const std::string& line) {
        if (!log) return;
        std::lock_guard lock(log_mutex);
        *log << "serve: " << line << '\n';
    }

    void accept();
    void receive_datagram();
    void on_text(std::uint64_t client, std::string bytes);
    void send_to(std::uint64_t client, Text message);
    void broadcast(Text message);
    void tick_loop();
    std::string health() const;
};

/// One websocket connection. All members are touched on the I/O thread only.
class Client : public std::enable_shared_from_this<Client> {
public:
    Client(tcp::socket&& socket, Server::Impl& server, std::uint64_t id)
        : ws_(std::move(socket)), server_(server), id_(id) {}

    std::uint64_t id() const { return id_; }

    void accept(http::request<http::string_body> request) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(request, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void send(const Text& message) {
        if (closed_) return;
        if (queue_.size() >= server_.config.send_queue) {
            ++server_.dropped;
            server_.note("client " + std::to_string(id_) + " dropped: send queue full");
            close();
            return;
        }
        queue_.push_back(message);
        if (!writing_) write_next();
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        if (server_.clients.erase(id_)) --server_.connected;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        server_.clients.emplace(id_, shared_from_this());
        ++server_.connected;
        server_.note("client " + std::to_string(id_) + " connected");
        ws_.text(true);
        send(server_.library);
        read();
    }

    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                if (!self->closed_) self->server_.note("client " + std::to_string(self->id_) + " disconnected");
                self->close();
                return;
            }
            std::string bytes = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->server_.on_text(self->id_, std::move(bytes));
            self->read();
        });
    }

    void write_next() {
        writing_ = true;
        ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->queue_.pop_front();
            if (ec) {
                self->close();
                return;
            }
            ++self->server_.frames_sent;
            if (self->queue_.empty()) {
                self->writing_ = false;
            } else {
                self->write_next();
            }
        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    Server::Impl& server_;
    std::uint64_t id_;
    std::deque<Text> queue_;
    bool writing_ = false;
    bool closed_ = false;
};

namespace {

/// Plain HTTP request on the shared port: /health, or a websocket upgrade.
class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
public:
    HttpConnection(tcp::socket&& socket, Server::Impl& server) : stream_(std::move(socket)), server_(server) {}

    void run() {
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, request_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

private:
    void on_read(beast::error_code ec) {
        if (ec) return;
        if (websocket::is_upgrade(request_)) {
            stream_.expires_never();
            auto client = std::make_shared<Client>(stream_.release_socket(), server_, server_.next_client++);
            client->accept(std::move(request_));
            return;
        }
        response_.version(request_.version());
        response_.keep_alive(false);
        response_.set(http::field::server, "unicon/" + std::string(kVersion));
        if (request_.method() == http::verb::get && request_.target() == "/health") {
            response_.result(http::status::ok);
            response_.set(http::field::content_type, "application/json");
            response_.body() = server_.health();
        } else {
            response_.result(http::status::not_found);
            response_.set(http::field::content_type, "text/plain");
            response_.body() = "not found\n";
        }
        response_.prepare_payload();
        http::async_write(stream_, response_, [self = shared_from_this()](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> request_;
    http::response<http::string_body> response_;
    Server::Impl& server_;
};

}  // namespace

void Server::Impl::accept() {
    acceptor.async_accept(ioc, [this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (ec != net::error::operation_aborted && acceptor.is_open()) accept();
            return;
        }
        std::make_shared<HttpConnection>(std::move(socket), *this)->run();
        accept();
    });
}

void Server::Impl::receive_datagram() {
    datagrams.async_receive_from(net::buffer(datagram), sender, [this](beast::error_code ec, std::size_t n) {
        if (ec == net::error::operation_aborted || !datagrams.is_open()) return;
        if (!ec) poses->ingest(std::string_view(datagram.data(), n));
        receive_datagram();
    });
}

void Server::Impl::on_text(std::uint64_t client, std::string bytes) {
    Message message;
    try {
        message = deserialize(bytes);
    } catch (const ProtocolError& e) {
        ++rejected;
        send_to(client, text(serialize(error_message(salvage_seq(bytes), e.code(), e.what()))));
        return;
    }
    {
        std::lock_guard lock(inbound_mutex);
        if (inbound.size() < config.inbound_capacity) {
            inbound.push_back({client, std::move(message)});
            return;
        }
    }
    ++rejected;
    send_to(client, text(serialize(error_message(message.seq, "busy", "inbound queue full"))));
}

void Server::Impl::send_to(std::uint64_t client, Text message) {
    net::post(ioc, [this, client, message = std::move(message)] {
        if (const auto it = clients.find(client); it != clients.end()) it->second->send(message);
    });
}

void Server::Impl::broadcast(Text message) {
    net::post(ioc, [this, message = std::move(message)] {
        // send() may drop a client and erase it from the map
        std::vector<std::shared_ptr<Client>> targets;
        for (const auto& [id, c] : clients) targets.push_back(c);
        for (const auto& c : targets) c->send(message);
    });
}

std::string Server::Impl::health() const {
    nlohmann::json j;
    j["status"] = "ok";
    j["version"] = std::string(kVersion);
    j["protocol"] = kProtocolVersion;
    j["ticks"] = ticks.load();
    j["clients"] = connected.load();
    return j.dump();
}

void Server::Impl::tick_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / config.tick_rate));
    auto deadline = clock::now();
    std::unique_lock lock(state_mutex);
    while (!stopping) {
        lock.unlock();
        std::deque<Inbound> batch;
        {
            std::lock_guard in(inbound_mutex);
            batch.swap(inbound);
        }
        for (const Inbound& in : batch) send_to(in.client, text(serialize(session.handle_message(in.message, in.client))));

        const TickResult r = session.tick();
        if (r.frame) {
            ticks = r.frame->tick;
            broadcast(text(serialize({r.frame->tick, *r.frame})));
        }
        if (r.error) {
            note(std::get<ErrorReply>(r.error->payload).code + ": " + std::get<ErrorReply>(r.error->payload).message);
            broadcast(text(serialize(*r.error)));
        }

        deadline += period;
        const auto now = clock::now();
        if (now > deadline + period) deadline = now;  // fell behind: no catch-up burst
        lock.lock();
        state_cv.wait_until(lock, deadline, [this] { return stopping; });
    }
}

Server::Server(Session session, ServerConfig config, std::ostream* log)
    : impl_(std::make_unique<Impl>(std::move(session), std::move(config), log)) {
    impl_->config.validate();
}

Server::~Server() { stop(); }

void Server::start() {
    Impl& s = *impl_;
    {
        std::lock_guard lock(s.state_mutex);
        if (s.running) return;
    }
    const auto address = net::ip::make_address(s.config.address);
    beast::error_code ec;
    const tcp::endpoint endpoint(address, static_cast<unsigned short>(s.config.port));
    s.acceptor.open(endpoint.protocol(), ec);
    if (!ec) s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) s.acceptor.bind(endpoint, ec);
    if (!ec) s.acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
        beast::error_code ignored;
        s.acceptor.close(ignored);
        throw Error("cannot listen on " + s.config.address + ":" + std::to_string(s.config.port) + ": " +
                    ec.message());
    }
    if (s.config.udp_port >= 0) {
        const udp::endpoint uep(address, static_cast<unsigned short>(s.config.udp_port));
        s.datagrams.open(uep.protocol(), ec);
        if (!ec) s.datagrams.bind(uep, ec);
        if (ec) {
            beast::error_code ignored;
            s.acceptor.close(ignored);
            s.datagrams.close(ignored);
            throw Error("cannot bind udp " + s.config.address + ":" + std::to_string(s.config.udp_port) + ": " +
                        ec.message());
        }
        s.bound_udp = s.datagrams.local_endpoint().port();
        s.receive_datagram();
    }
    s.bound_port = s.acceptor.local_endpoint().port();
    s.accept();
    {
        std::lock_guard lock(s.state_mutex);
        s.running = true;
        s.stopping = false;
    }
    s.note("listening on " + s.config.address + ":" + std::to_string(port()) +
           (s.config.udp_port >= 0 ? ", poses on udp " + std::to_string(udp_port()) : std::string()));
    s.io_thread = std::thread([&s] {
        auto guard = net::make_work_guard(s.ioc);
        s.ioc.run();
    });
    s.tick_thread = std::thread([&s] { s.tick_loop(); });
}

void Server::stop() {
    Impl& s = *impl_;
    {
        std::lock_guard lock(s.state_mutex);
        if (!s.running) return;
        s.stopping = true;
    }
    s.state_cv.notify_all();
    if (s.tick_thread.joinable()) s.tick_thread.join();
    net::post(s.ioc, [&s] {
        beast::error_code ec;
        s.acceptor.close(ec);
        s.datagrams.close(ec);
        std::vector<std::shared_ptr<Client>> all;
        for (const auto& [id, c] : s.clients) all.push_back(c);
        for (const auto& c : all) c->close();
        s.ioc.stop();
    });
    if (s.io_thread.joinable()) s.io_thread.join();
    s.note("stopped after " + std::to_string(s.ticks.load()) + " ticks");
    if (s.log) {
        std::lock_guard lock(s.log_mutex);
        s.log->flush();
    }
    {
        std::lock_guard lock(s.state_mutex);
        s.running = false;
    }
    s.state_cv.notify_all();
}

void Server::wait() {
    std::unique_lock lock(impl_->state_mutex);
    impl_->state_cv.wait(lock, [this] { return !impl_->running; });
}

int Server::port() const { return impl_->bound_port; }

int Server::udp_port() const { return impl_->bound_udp; }

bool Server::running() const {
    std::lock_guard lock(impl_->state_mutex);
    return impl_->running;
}

ServerStats Server::stats() const {
    return {impl_->ticks.load(), impl_->frames_sent.load(), impl_->connected.load(), impl_->dropped.load(),
            impl_->rejected.load()};
}

}  // namespace unicon
