#include "pieeg/server.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <deque>
#include <future>
#include <list>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace pieeg {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

unsigned short port_from_env(unsigned short fallback) {
  const char* env = std::getenv("PIEEG_PORT");
  if (!env || !*env) return fallback;
  const std::string_view text(env);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value > 65535) {
    throw ServerError("PIEEG_PORT='" + std::string(text) + "' is not a port number");
  }
  return static_cast<unsigned short>(value);
}

namespace detail {
// Anything holding a socket that stop() must tear down.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void shutdown() = 0;
};
}  // namespace detail

struct detail::ServerImpl {
  AcquisitionEngine& engine;
  ServerOptions options;
  net::io_context ioc{1};
  std::optional<tcp::acceptor> acceptor;
  std::thread thread;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::atomic<std::size_t> clients{0};
  unsigned short bound_port = 0;
  std::list<std::weak_ptr<Connection>> connections;  // io thread only

  ServerImpl(AcquisitionEngine& e, ServerOptions o) : engine(e), options(std::move(o)) {}
  void do_accept();
  void track(const std::shared_ptr<Connection>& c) {
    connections.remove_if([](const auto& w) { return w.expired(); });
    connections.push_back(c);
  }
  double uptime_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
};

namespace {

class WsSession : public detail::Connection, public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, detail::ServerImpl& srv)
      : ws_(std::move(socket)), srv_(srv), timer_(ws_.get_executor()) {}

  ~WsSession() { release(); }

  void run(http::request<http::string_body> req) {
    srv_.track(shared_from_this());
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    sink_ = srv_.engine.subscribe(srv_.options.client_queue);
    ++srv_.clients;
    counted_ = true;
    do_read();
    schedule_pump(std::chrono::milliseconds(0));
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      release();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    handle(text);
    do_read();
  }

  void handle(const std::string& text) {
    auto msg = nlohmann::json::parse(text, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) {
      sink_->push(ControlReply{{{"type", "error"}, {"ref", nullptr}, {"detail", "malformed message: expected a JSON object"}}});
      return;
    }
    std::weak_ptr<Sink> weak = sink_;
    srv_.engine.submit(std::move(msg), [weak](const nlohmann::json& r) {
      if (auto sink = weak.lock()) sink->push(ControlReply{r});
    });
  }

  void schedule_pump(std::chrono::milliseconds delay) {
    if (closed_) return;
    timer_.expires_after(delay);
    timer_.async_wait(beast::bind_front_handler(&WsSession::on_timer, shared_from_this()));
  }

  void on_timer(beast::error_code ec) {
    if (ec || closed_) return;
    pump();
    if (sink_->finished() && out_.empty() && !writing_) {
      // Engine stopped: say goodbye.
      closing_ = true;
      ws_.async_close(websocket::close_code::going_away,
                      beast::bind_front_handler(&WsSession::on_close, shared_from_this()));
      return;
    }
    schedule_pump(std::chrono::milliseconds(5));
  }

  void pump() {
    while (out_.size() < 8) {
      auto item = sink_->try_pop();
      if (!item) break;
      out_.push_back(to_json(*item).dump());
    }
    if (!writing_ && !out_.empty() && !closing_) do_write();
  }

  void do_write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(out_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    if (ec) {
      release();
      return;
    }
    out_.pop_front();
    pump();
  }

  void on_close(beast::error_code) { release(); }

  void shutdown() override {
    release();
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ignored);
    beast::get_lowest_layer(ws_).socket().close(ignored);
  }

  void release() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ignored;
    timer_.cancel(ignored);
    if (sink_) srv_.engine.unsubscribe(sink_);
    if (counted_) --srv_.clients;
    counted_ = false;
  }

  websocket::stream<beast::tcp_stream> ws_;
  detail::ServerImpl& srv_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Sink> sink_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
  bool counted_ = false;
};

class HttpSession : public detail::Connection, public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, detail::ServerImpl& srv) : stream_(std::move(socket)), srv_(srv) {}

  void run() {
    srv_.track(shared_from_this());
    do_read();
  }

  void shutdown() override {
    beast::error_code ignored;
    if (stream_.socket().is_open()) stream_.socket().close(ignored);
  }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(req_) && req_.target() == "/ws") {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), srv_)->run(std::move(req_));
      return;
    }
    respond();
  }

  void respond() {
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::server, "pieeg");
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    nlohmann::json body;
    const auto target = req_.target();
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      res->result(http::status::method_not_allowed);
      body = {{"error", "only GET is supported"}};
    } else if (target == "/health") {
      res->result(http::status::ok);
      body = {{"status", "ok"}, {"uptime_s", srv_.uptime_s()}, {"clients", srv_.clients.load()}};
    } else if (target == "/config") {
      res->result(http::status::ok);
      body = to_json(srv_.engine.session());
    } else if (target == "/ws") {
      res->result(http::status::upgrade_required);
      body = {{"error", "WebSocket upgrade required"}};
    } else {
      res->result(http::status::not_found);
      body = {{"error", "not found"}};
    }
    res->body() = body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  detail::ServerImpl& srv_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

void detail::ServerImpl::do_accept() {
  acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted) return;
    } else {
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
    }
    if (acceptor && acceptor->is_open()) do_accept();
  });
}

Server::Server(AcquisitionEngine& engine, ServerOptions options)
    : impl_(std::make_unique<detail::ServerImpl>(engine, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  if (impl_->thread.joinable()) throw ServerError("server already started");
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.address, ec);
  if (ec) throw ServerError("bad listen address '" + impl_->options.address + "': " + ec.message());
  const tcp::endpoint endpoint(address, impl_->options.port);
  tcp::acceptor acc(impl_->ioc);
  acc.open(endpoint.protocol(), ec);
  if (!ec) acc.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(endpoint, ec);
  if (!ec) acc.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw ServerError("cannot listen on " + impl_->options.address + ":" + std::to_string(impl_->options.port) +
                      ": " + ec.message());
  }
  impl_->bound_port = acc.local_endpoint().port();
  impl_->acceptor.emplace(std::move(acc));
  impl_->started = std::chrono::steady_clock::now();
  impl_->do_accept();
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (!impl_->thread.joinable()) return;
  // Close the listener and every live connection on the io thread, so
  // clients see the socket go away instead of hanging on a stopped loop.
  std::promise<void> closed;
  auto done = closed.get_future();
  net::post(impl_->ioc, [this, &closed] {
    beast::error_code ignored;
    if (impl_->acceptor) impl_->acceptor->close(ignored);
    for (auto& weak : impl_->connections) {
      if (auto c = weak.lock()) c->shutdown();
    }
    impl_->connections.clear();
    closed.set_value();
  });
  done.wait_for(std::chrono::seconds(2));
  impl_->ioc.stop();
  impl_->thread.join();
}

unsigned short Server::port() const { return impl_->bound_port; }

std::size_t Server::clients() const { return impl_->clients.load(); }

}  // namespace pieeg
