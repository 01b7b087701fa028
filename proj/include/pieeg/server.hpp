#pragma once

// HTTP + WebSocket front end for an AcquisitionEngine.
//   GET /health  -> {"status":"ok","uptime_s":...}
//   GET /config  -> current session
//   /ws          -> status snapshot, then samples/event/status messages;
//                   accepts set_gain, set_sps, filter and record messages

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include "pieeg/daemon.hpp"

namespace pieeg {

inline constexpr unsigned short kDefaultPort = 9090;

namespace detail {
struct ServerImpl;
}

class ServerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = kDefaultPort;  // 0 picks a free port
  std::size_t client_queue = 256;      // blocks buffered per client before drop-oldest
};

/// PIEEG_PORT when set to a valid port number, else `fallback`. Throws
/// ServerError for a set but malformed value.
unsigned short port_from_env(unsigned short fallback = kDefaultPort);

/// The engine must outlive the server. Clients are served from one I/O thread.
class Server {
 public:
  Server(AcquisitionEngine& engine, ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving. Throws ServerError when the port is taken.
  void start();
  void stop();

  unsigned short port() const;
  std::size_t clients() const;

 private:
  std::unique_ptr<detail::ServerImpl> impl_;
};

}  // namespace pieeg
