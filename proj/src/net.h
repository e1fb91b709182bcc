#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "json.hpp"

namespace nestcv::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset();
  // Unblocks readers in other threads without closing the descriptor.
  void shutdown_both();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  int port = 0;
};

// "host:port"; throws UsageError.
Endpoint parse_endpoint(const std::string& text);

// Binds and listens; `bound_port` receives the actual port (for port 0).
Socket listen_on(const Endpoint& ep, int* bound_port = nullptr);
// Waits up to `timeout` for a connection; nullopt on timeout.
std::optional<Socket> accept_one(const Socket& listener, std::chrono::milliseconds timeout);
// Throws IoError when the endpoint cannot be reached.
Socket connect_to(const Endpoint& ep);

// Length-delimited frames: 4-byte big-endian payload length, then UTF-8 JSON.
void send_frame(int fd, const nlohmann::json& message);
// nullopt on orderly EOF; throws IoError on a broken or oversized frame.
// A positive timeout bounds the wait for the first byte: on expiry returns a
// null json value.
std::optional<nlohmann::json> recv_frame(int fd, std::chrono::milliseconds timeout =
                                                     std::chrono::milliseconds{-1});

}  // namespace nestcv::net
