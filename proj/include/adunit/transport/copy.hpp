#ifndef ADUNIT__TRANSPORT__COPY_HPP_
#define ADUNIT__TRANSPORT__COPY_HPP_

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adunit/clock.hpp"
#include "adunit/error.hpp"

// Copy-based baseline: a loopback stream socket carrying length-prefixed
// frames (4-byte little-endian length, then payload). Every message is copied
// user -> kernel on send and kernel -> user on receive.

namespace adunit::transport
{

inline constexpr std::uint64_t kMaxCopyFrame = std::numeric_limits<std::uint32_t>::max();

namespace detail
{

class Fd
{
public:
  Fd() = default;
  explicit Fd(int fd)
  : fd_(fd) {}
  Fd(const Fd &) = delete;
  Fd & operator=(const Fd &) = delete;
  Fd(Fd && o) noexcept
  : fd_(std::exchange(o.fd_, -1)) {}
  Fd & operator=(Fd && o) noexcept
  {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() {reset();}
  int get() const noexcept {return fd_;}
  explicit operator bool() const noexcept {return fd_ >= 0;}
  void reset() noexcept
  {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

private:
  int fd_ {-1};
};

inline void set_nodelay(int fd)
{
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

inline std::array<std::byte, 4> encode_length(std::uint32_t n)
{
  return {std::byte(n & 0xFF), std::byte((n >> 8) & 0xFF), std::byte((n >> 16) & 0xFF),
    std::byte((n >> 24) & 0xFF)};
}

inline std::uint32_t decode_length(const std::array<std::byte, 4> & b)
{
  return std::to_integer<std::uint32_t>(b[0]) | (std::to_integer<std::uint32_t>(b[1]) << 8) |
         (std::to_integer<std::uint32_t>(b[2]) << 16) |
         (std::to_integer<std::uint32_t>(b[3]) << 24);
}

// Returns false when the peer is gone.
inline bool send_frame(int fd, std::span<const std::byte> payload)
{
  auto header = encode_length(static_cast<std::uint32_t>(payload.size()));
  iovec iov[2];
  iov[0].iov_base = header.data();
  iov[0].iov_len = header.size();
  iov[1].iov_base = const_cast<std::byte *>(payload.data());
  iov[1].iov_len = payload.size();
  std::size_t total = header.size() + payload.size();
  std::size_t sent = 0;
  int idx = 0;
  while (sent < total) {
    msghdr msg {};
    msg.msg_iov = &iov[idx];
    msg.msg_iovlen = static_cast<std::size_t>(2 - idx);
    const ssize_t n = ::sendmsg(fd, &msg, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      return false;
    }
    sent += static_cast<std::size_t>(n);
    auto left = static_cast<std::size_t>(n);
    while (idx < 2 && left >= iov[idx].iov_len) {
      left -= iov[idx].iov_len;
      iov[idx].iov_len = 0;
      ++idx;
    }
    if (idx < 2) {
      iov[idx].iov_base = static_cast<char *>(iov[idx].iov_base) + left;
      iov[idx].iov_len -= left;
    }
  }
  return true;
}

// Reads exactly out.size() bytes; false when the peer closed.
inline bool recv_exact(int fd, std::span<std::byte> out)
{
  std::size_t got = 0;
  while (got < out.size()) {
    const ssize_t n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n == 0) {
      return false;
    }
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      return false;
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace detail

/// Listening side of the loopback baseline; fans every frame out to each
/// connected subscriber. Sends block when a subscriber falls behind.
class CopyPublisher
{
public:
  explicit CopyPublisher(std::uint16_t port = 0, std::uint64_t max_message_size = kMaxCopyFrame)
  : max_message_size_(std::min(max_message_size, kMaxCopyFrame))
  {
    listen_ = detail::Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!listen_) {
      throw Error(Errc::transport_failure, std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(listen_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr {};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_.get(), reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_.get(), 128) != 0)
    {
      throw Error(Errc::transport_failure, std::string("bind/listen: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_.get(), reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  std::uint16_t port() const noexcept {return port_;}
  std::size_t subscriber_count() const noexcept {return subscribers_.size();}

  /// Accepts connections until `n` subscribers are registered.
  bool wait_for_subscribers(std::size_t n, std::chrono::milliseconds timeout)
  {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (subscribers_.size() < n) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        return false;
      }
      pollfd p {listen_.get(), POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) > 0) {
        accept_pending();
      }
    }
    return true;
  }

  void publish_copy(std::span<const std::byte> payload)
  {
    if (payload.size() > max_message_size_) {
      throw Error(Errc::message_too_large, std::to_string(payload.size()) + " bytes");
    }
    accept_pending();
    bool lost = false;
    for (auto it = subscribers_.begin(); it != subscribers_.end(); ) {
      if (!detail::send_frame(it->get(), payload)) {
        it = subscribers_.erase(it);
        lost = true;
      } else {
        ++it;
      }
    }
    if (lost) {
      throw Error(Errc::disconnected, "a subscriber closed its connection");
    }
  }

private:
  void accept_pending()
  {
    for (;;) {
      pollfd p {listen_.get(), POLLIN, 0};
      if (::poll(&p, 1, 0) <= 0) {
        return;
      }
      int fd = ::accept4(listen_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        return;
      }
      detail::set_nodelay(fd);
      subscribers_.emplace_back(fd);
    }
  }

  detail::Fd listen_;
  std::vector<detail::Fd> subscribers_;
  std::uint16_t port_ {0};
  std::uint64_t max_message_size_;
};

class CopySubscriber
{
public:
  explicit CopySubscriber(std::uint16_t port, std::uint64_t max_message_size = kMaxCopyFrame)
  : max_message_size_(std::min(max_message_size, kMaxCopyFrame))
  {
    sock_ = detail::Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!sock_) {
      throw Error(Errc::transport_failure, std::string("socket: ") + std::strerror(errno));
    }
    sockaddr_in addr {};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::connect(sock_.get(), reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) != 0) {
      throw Error(Errc::disconnected, std::string("connect: ") + std::strerror(errno));
    }
    detail::set_nodelay(sock_.get());
  }

  /// Receives the next frame into `out` (resized to the payload length).
  /// Returns false when nothing arrived (non-blocking) or the timeout elapsed.
  bool take_copy_into(
    std::vector<std::byte> & out, bool blocking = false,
    std::chrono::nanoseconds timeout = std::chrono::seconds(1))
  {
    const int wait_ms = blocking ?
      static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(timeout).count()) : 0;
    pollfd p {sock_.get(), POLLIN, 0};
    const int rc = ::poll(&p, 1, wait_ms);
    if (rc <= 0) {
      return false;
    }
    std::array<std::byte, 4> header {};
    if (!detail::recv_exact(sock_.get(), header)) {
      throw Error(Errc::disconnected, "publisher closed the connection");
    }
    const std::uint32_t n = detail::decode_length(header);
    if (n > max_message_size_) {
      throw Error(Errc::message_too_large, std::to_string(n) + " bytes");
    }
    out.resize(n);
    if (!detail::recv_exact(sock_.get(), out)) {
      throw Error(Errc::disconnected, "publisher closed mid-frame");
    }
    return true;
  }

  std::optional<std::vector<std::byte>> take_copy(
    bool blocking = false, std::chrono::nanoseconds timeout = std::chrono::seconds(1))
  {
    std::vector<std::byte> out;
    if (!take_copy_into(out, blocking, timeout)) {
      return std::nullopt;
    }
    return out;
  }

private:
  detail::Fd sock_;
  std::uint64_t max_message_size_;
};

}  // namespace adunit::transport

#endif  // ADUNIT__TRANSPORT__COPY_HPP_
