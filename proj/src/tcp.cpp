#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "fednerf/transport.hpp"

namespace fednerf {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(errno_text("tcp send"));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) throw std::runtime_error("tcp connection closed by peer");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(errno_text("tcp recv"));
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw std::runtime_error("cannot resolve host " + host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

void TcpLink::send_frame(std::span<const std::uint8_t> body) {
  if (fd_ < 0) throw std::runtime_error("tcp link closed");
  if (body.size() > 0xffffffffu) throw std::invalid_argument("frame too large");
  const auto n = static_cast<std::uint32_t>(body.size());
  const std::uint8_t prefix[4] = {static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
                                  static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)};
  write_all(fd_, prefix, 4);
  write_all(fd_, body.data(), body.size());
}

std::vector<std::uint8_t> TcpLink::recv_frame() {
  if (fd_ < 0) throw std::runtime_error("tcp link closed");
  std::uint8_t prefix[4];
  read_all(fd_, prefix, 4);
  const std::uint32_t n = (static_cast<std::uint32_t>(prefix[0]) << 24) | (static_cast<std::uint32_t>(prefix[1]) << 16) |
                          (static_cast<std::uint32_t>(prefix[2]) << 8) | prefix[3];
  std::vector<std::uint8_t> body(n);
  read_all(fd_, body.data(), n);
  return body;
}

void TcpLink::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string msg = errno_text("bind");
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  if (::listen(fd_, 64) < 0) {
    const std::string msg = errno_text("listen");
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpLink> TcpListener::accept() {
  for (;;) {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c >= 0) {
      set_nodelay(c);
      return std::make_unique<TcpLink>(c);
    }
    if (errno != EINTR) throw std::runtime_error(errno_text("accept"));
  }
}

std::unique_ptr<TcpLink> tcp_connect(const std::string& host, std::uint16_t port, int timeout_ms) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error(errno_text("socket"));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_nodelay(fd);
      return std::make_unique<TcpLink>(fd);
    }
    const std::string msg = errno_text("connect");
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) throw std::runtime_error(msg);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace fednerf
