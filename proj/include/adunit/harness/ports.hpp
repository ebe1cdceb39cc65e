#ifndef ADUNIT__HARNESS__PORTS_HPP_
#define ADUNIT__HARNESS__PORTS_HPP_

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "adunit/error.hpp"
#include "adunit/transport/copy.hpp"
#include "adunit/transport/loaned.hpp"

// Transport-agnostic endpoints so stage code is identical on both paths.

namespace adunit::harness
{

enum class TransportKind
{
  loaned,
  copy,
};

constexpr std::string_view to_string(TransportKind t) noexcept
{
  return t == TransportKind::loaned ? "loaned" : "copy";
}

inline TransportKind parse_transport(std::string_view s)
{
  if (s == "loaned") {
    return TransportKind::loaned;
  }
  if (s == "copy") {
    return TransportKind::copy;
  }
  throw Error(Errc::invalid_config, "transport must be 'loaned' or 'copy', got '" + std::string(s) + "'");
}

class OutPort
{
public:
  virtual ~OutPort() = default;
  /// Writable buffer of the topic's message size.
  virtual std::span<std::byte> acquire() = 0;
  /// Publishes the first `length` bytes of the acquired buffer.
  virtual void send(std::size_t length) = 0;
};

class InPort
{
public:
  virtual ~InPort() = default;
  /// Blocks for the next message; nullopt on timeout. The span stays valid
  /// until release().
  virtual std::optional<std::span<const std::byte>> take(std::chrono::nanoseconds timeout) = 0;
  virtual void release() = 0;
};

class LoanedOutPort : public OutPort
{
public:
  explicit LoanedOutPort(const transport::Topic & topic)
  : publisher_(topic.advertise()) {}

  std::span<std::byte> acquire() override
  {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    for (;;) {
      try {
        loan_ = publisher_.borrow();
        return loan_->mutable_payload();
      } catch (const Error & e) {
        // Subscribers hold every free chunk: wait for one to come back.
        if (e.code() != Errc::pool_exhausted || std::chrono::steady_clock::now() > deadline) {
          throw;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(200));
      }
    }
  }

  void send(std::size_t length) override
  {
    loan_->set_payload_length(length);
    publisher_.publish_loaned(*loan_);
    loan_.reset();
  }

private:
  transport::Publisher publisher_;
  std::optional<transport::LoanHandle> loan_;
};

class LoanedInPort : public InPort
{
public:
  explicit LoanedInPort(const transport::Topic & topic)
  : subscriber_(topic.subscribe()) {}

  std::optional<std::span<const std::byte>> take(std::chrono::nanoseconds timeout) override
  {
    held_ = subscriber_.take_loaned(true, timeout);
    if (!held_) {
      return std::nullopt;
    }
    return held_->payload();
  }

  void release() override
  {
    if (held_) {
      subscriber_.return_loaned(*held_);
      held_.reset();
    }
  }

  const transport::Subscriber & subscriber() const noexcept {return subscriber_;}

private:
  transport::Subscriber subscriber_;
  std::optional<transport::LoanHandle> held_;
};

class CopyOutPort : public OutPort
{
public:
  CopyOutPort(transport::CopyPublisher & publisher, std::size_t message_size)
  : publisher_(publisher), buffer_(message_size) {}

  std::span<std::byte> acquire() override {return buffer_;}

  void send(std::size_t length) override
  {
    publisher_.publish_copy(std::span<const std::byte>(buffer_).first(length));
  }

private:
  transport::CopyPublisher & publisher_;
  std::vector<std::byte> buffer_;
};

class CopyInPort : public InPort
{
public:
  CopyInPort(std::uint16_t port, std::size_t max_message_size)
  : subscriber_(port, max_message_size) {}

  std::optional<std::span<const std::byte>> take(std::chrono::nanoseconds timeout) override
  {
    if (!subscriber_.take_copy_into(buffer_, true, timeout)) {
      return std::nullopt;
    }
    return std::span<const std::byte>(buffer_);
  }

  void release() override {}

private:
  transport::CopySubscriber subscriber_;
  std::vector<std::byte> buffer_;
};

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__PORTS_HPP_
