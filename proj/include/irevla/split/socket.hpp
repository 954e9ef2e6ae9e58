#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <utility>

#include "irevla/split/protocol.hpp"

namespace irevla::split {

struct TransportError : Error {
  using Error::Error;
};
struct TimeoutError : TransportError {
  using TransportError::TransportError;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address '" + s + "' must look like host:port");
  Endpoint e;
  e.host = s.substr(0, colon);
  if (e.host.empty()) e.host = "0.0.0.0";
  const std::string port = s.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || v < 0 || v > 65535) throw ConfigError("bad port in address '" + s + "'");
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
};

inline sockaddr_in to_sockaddr(const Endpoint& e) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(e.port);
  const std::string host = e.host == "localhost" ? "127.0.0.1" : e.host;
  if (::inet_pton(AF_INET, host.c_str(), &a.sin_addr) != 1) {
    addrinfo hints{}, *res = nullptr;
    hints.ai_family = AF_INET;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
      throw TransportError("cannot resolve host '" + e.host + "'");
    a.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return a;
}

// A connected TCP stream carrying protocol frames.
class Connection {
 public:
  Connection() = default;
  explicit Connection(Fd fd) : fd_(std::move(fd)) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  bool open() const { return fd_.valid(); }
  void close() { fd_.reset(); }

  void send_bytes(std::span<const std::uint8_t> b) {
    std::size_t off = 0;
    while (off < b.size()) {
      const ssize_t n = ::send(fd_.get(), b.data() + off, b.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("send"));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void send(const Message& m) { send_bytes(encode(m)); }

  // Reads one frame. Header problems surface as framing, protocol or
  // negotiation errors; EOF or timeout mid-frame as a framing error.
  Message receive(double timeout_s) {
    std::uint8_t header[kHeaderSize];
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(timeout_s));
    const std::size_t got = read_some(header, kHeaderSize, deadline);
    if (got == 0) throw TransportError("connection closed by peer");
    if (got < kHeaderSize) throw FramingError("truncated frame header");
    FrameHeader h = parse_header(header);
    Message m;
    m.kind = static_cast<Kind>(h.kind);
    m.version = h.version;
    m.payload.resize(h.length);
    if (read_some(m.payload.data(), h.length, deadline) < h.length)
      throw FramingError("frame truncated: expected " + std::to_string(h.length) + " payload bytes");
    return m;
  }

 private:
  // Reads up to n bytes, stopping early only at EOF. Throws on timeout.
  std::size_t read_some(std::uint8_t* dst, std::size_t n, std::chrono::steady_clock::time_point deadline) {
    std::size_t off = 0;
    while (off < n) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) throw TimeoutError("timed out waiting for data");
      pollfd p{fd_.get(), POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("poll"));
      }
      if (r == 0) throw TimeoutError("timed out waiting for data");
      const ssize_t k = ::recv(fd_.get(), dst + off, n - off, 0);
      if (k < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw TransportError(errno_text("recv"));
      }
      if (k == 0) break;
      off += static_cast<std::size_t>(k);
    }
    return off;
  }

  Fd fd_;
};

class Listener {
 public:
  explicit Listener(const Endpoint& e) {
    fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd_.valid()) throw TransportError(errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in a = to_sockaddr(e);
    if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&a), sizeof a) != 0)
      throw TransportError(errno_text(("bind " + e.host + ":" + std::to_string(e.port)).c_str()));
    if (::listen(fd_.get(), 4) != 0) throw TransportError(errno_text("listen"));
    socklen_t len = sizeof a;
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&a), &len);
    port_ = ntohs(a.sin_port);
  }

  std::uint16_t port() const { return port_; }

  Connection accept(double timeout_s) {
    pollfd p{fd_.get(), POLLIN, 0};
    for (;;) {
      const int r = ::poll(&p, 1, static_cast<int>(timeout_s * 1000));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw TransportError(errno_text("poll"));
      if (r == 0) throw TimeoutError("no connection within " + std::to_string(timeout_s) + " s");
      break;
    }
    Fd c(::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!c.valid()) throw TransportError(errno_text("accept"));
    return Connection(std::move(c));
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

inline Connection connect_to(const Endpoint& e, double timeout_s) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw TransportError(errno_text("socket"));
  sockaddr_in a = to_sockaddr(e);
  const int flags = ::fcntl(fd.get(), F_GETFL, 0);
  ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);
  if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
    if (errno != EINPROGRESS) throw TransportError(errno_text("connect"));
    pollfd p{fd.get(), POLLOUT, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout_s * 1000));
    if (r <= 0) throw TimeoutError("connect to " + e.host + ":" + std::to_string(e.port) + " timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw TransportError("connect: " + std::string(std::strerror(err)));
  }
  ::fcntl(fd.get(), F_SETFL, flags);
  return Connection(std::move(fd));
}

}  // namespace irevla::split
