#include "net.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "nestcv/error.h"
#include "text_util.h"

namespace nestcv::net {

namespace {
constexpr std::uint32_t kMaxFrame = 64u << 20;

bool write_all(int fd, const char* data, std::size_t size) {
  std::size_t off = 0;
  while (off < size) {
    const auto n = ::send(fd, data + off, size - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

// 1 = filled, 0 = EOF before any byte, -1 = error / EOF mid-buffer.
int read_all(int fd, char* data, std::size_t size) {
  std::size_t off = 0;
  while (off < size) {
    const auto n = ::recv(fd, data + off, size - off, 0);
    if (n == 0) return off == 0 ? 0 : -1;
    if (n < 0) {
      if (errno == EINTR) continue;
      return -1;
    }
    off += static_cast<std::size_t>(n);
  }
  return 1;
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto port = std::to_string(ep.port);
  const char* host = ep.host.empty() || ep.host == "*" ? nullptr : ep.host.c_str();
  const int rc = ::getaddrinfo(host, port.c_str(), &hints, &res);
  if (rc != 0)
    throw IoError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  return res;
}
}  // namespace

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = other.release();
  }
  return *this;
}

void Socket::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  long long port = -1;
  if (colon == std::string::npos || !detail::parse_int(text.substr(colon + 1), port) ||
      port < 0 || port > 65535)
    throw UsageError("bad endpoint '" + text + "' (expected host:port)");
  return {text.substr(0, colon), static_cast<int>(port)};
}

Socket listen_on(const Endpoint& ep, int* bound_port) {
  addrinfo* res = resolve(ep, true);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw IoError(std::string("socket: ") + std::strerror(errno));
  }
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = ::bind(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 || ::listen(s.fd(), 8) != 0)
    throw IoError("cannot listen on " + ep.host + ":" + std::to_string(ep.port) + ": " +
                  std::strerror(errno));
  if (bound_port) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    *bound_port = ntohs(addr.sin_port);
  }
  return s;
}

std::optional<Socket> accept_one(const Socket& listener, std::chrono::milliseconds timeout) {
  pollfd pfd{listener.fd(), POLLIN, 0};
  const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (rc <= 0) return std::nullopt;
  Socket s(::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC));
  if (!s.valid()) return std::nullopt;
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

Socket connect_to(const Endpoint& ep) {
  addrinfo* res = resolve(ep, false);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw IoError(std::string("socket: ") + std::strerror(errno));
  }
  const int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0)
    throw IoError("cannot connect to " + ep.host + ":" + std::to_string(ep.port) + ": " +
                  std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void send_frame(int fd, const nlohmann::json& message) {
  const auto payload = message.dump();
  if (payload.size() > kMaxFrame) throw IoError("frame too large");
  const auto len = static_cast<std::uint32_t>(payload.size());
  const char header[4] = {static_cast<char>(len >> 24), static_cast<char>(len >> 16),
                          static_cast<char>(len >> 8), static_cast<char>(len)};
  std::string buf(header, 4);
  buf += payload;
  if (!write_all(fd, buf.data(), buf.size()))
    throw IoError(std::string("send: ") + std::strerror(errno));
}

std::optional<nlohmann::json> recv_frame(int fd, std::chrono::milliseconds timeout) {
  if (timeout.count() >= 0) {
    pollfd pfd{fd, POLLIN, 0};
    int rc;
    while ((rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()))) < 0 && errno == EINTR) {
    }
    if (rc == 0) return nlohmann::json();
  }
  unsigned char header[4];
  const int rc = read_all(fd, reinterpret_cast<char*>(header), 4);
  if (rc == 0) return std::nullopt;
  if (rc < 0) throw IoError("connection broken while reading frame header");
  const std::uint32_t len = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                            (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (len > kMaxFrame) throw IoError("oversized frame (" + std::to_string(len) + " bytes)");
  std::string payload(len, '\0');
  if (len && read_all(fd, payload.data(), len) != 1)
    throw IoError("connection broken inside a frame");
  try {
    return nlohmann::json::parse(payload);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("frame is not valid JSON: ") + e.what());
  }
}

}  // namespace nestcv::net
