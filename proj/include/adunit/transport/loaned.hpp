#ifndef ADUNIT__TRANSPORT__LOANED_HPP_
#define ADUNIT__TRANSPORT__LOANED_HPP_

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>

#include "adunit/clock.hpp"
#include "adunit/error.hpp"
#include "adunit/transport/segment_layout.hpp"
#include "adunit/transport/shared_memory.hpp"

namespace adunit::transport
{

struct TopicConfig
{
  std::string name;
  std::uint64_t message_size {0};
  std::uint32_t pool_capacity {24};
  std::uint32_t queue_depth {8};
};

namespace detail
{

// One mapping of a topic segment plus typed accessors into it.
class Segment
{
public:
  explicit Segment(SharedMemory shm)
  : shm_(std::move(shm)) {}

  SegmentHeader & header() const {return *reinterpret_cast<SegmentHeader *>(shm_.data());}
  ControlBlock & control() const
  {
    return *reinterpret_cast<ControlBlock *>(shm_.data() + kControlOffset);
  }
  ChunkEntry & chunk(std::uint32_t i) const
  {
    return reinterpret_cast<ChunkEntry *>(shm_.data() + header().chunk_table_offset)[i];
  }
  SubscriberSlotHeader & slot(std::uint32_t s) const
  {
    return *reinterpret_cast<SubscriberSlotHeader *>(
      shm_.data() + header().subscriber_table_offset + geometry_.slot_stride * s);
  }
  std::uint32_t * ring(std::uint32_t s) const
  {
    return reinterpret_cast<std::uint32_t *>(&slot(s) + 1);
  }
  std::uint8_t * held(std::uint32_t s) const
  {
    return reinterpret_cast<std::uint8_t *>(ring(s) + geometry_.queue_depth);
  }
  std::byte * payload(std::uint32_t i) const {return shm_.data() + chunk(i).offset;}

  const Geometry & geometry() const noexcept {return geometry_;}
  void set_geometry(const Geometry & g) noexcept {geometry_ = g;}
  const std::string & os_name() const noexcept {return shm_.name();}
  bool owner() const noexcept {return shm_.owner();}

  // Accounting helpers; caller holds the segment lock.
  void push_free(std::uint32_t i)
  {
    auto & c = chunk(i);
    c.state = ChunkState::free;
    c.refcount = 0;
    c.next_free = control().free_head;
    control().free_head = i;
    ++control().free_count;
  }

  std::uint32_t pop_free()
  {
    auto & cb = control();
    const std::uint32_t i = cb.free_head;
    cb.free_head = chunk(i).next_free;
    chunk(i).next_free = kNoChunk;
    --cb.free_count;
    return i;
  }

  void unref(std::uint32_t i)
  {
    auto & c = chunk(i);
    if (c.refcount > 0 && --c.refcount == 0) {
      push_free(i);
    }
  }

  // Drops every queued and held reference of a subscriber slot.
  void clear_slot(std::uint32_t s)
  {
    auto & sl = slot(s);
    const auto qd = geometry_.queue_depth;
    for (std::uint32_t k = 0; k < sl.count; ++k) {
      unref(ring(s)[(sl.head + k) % qd]);
    }
    sl.head = 0;
    sl.count = 0;
    for (std::uint32_t i = 0; i < geometry_.pool_capacity; ++i) {
      if (held(s)[i] != 0) {
        held(s)[i] = 0;
        unref(i);
      }
    }
  }

private:
  SharedMemory shm_;
  Geometry geometry_ {};
};

}  // namespace detail

/// Reference to a chunk lent by the transport, to a publisher (writable)
/// or to a subscriber (read-only). Copies refer to the same loan; once the
/// loan is published or returned every copy is stale.
class LoanHandle
{
public:
  LoanHandle() = default;

  bool writable() const noexcept {return writable_;}
  std::uint32_t chunk_index() const noexcept {return index_;}
  std::uint64_t offset() const noexcept {return offset_;}
  std::uint64_t seq() const noexcept {return seq_;}
  std::uint64_t publish_timestamp_ns() const noexcept {return publish_ts_;}
  std::uint64_t payload_length() const noexcept {return length_;}
  std::uint64_t capacity() const noexcept {return capacity_;}

  std::span<const std::byte> payload() const noexcept
  {
    return {data_, static_cast<std::size_t>(length_)};
  }

  std::span<std::byte> mutable_payload() const
  {
    if (!writable_) {
      throw Error(Errc::stale_handle, "subscriber loans are read-only");
    }
    return {data_, static_cast<std::size_t>(capacity_)};
  }

  // Publisher side: how many bytes of the chunk the message occupies.
  void set_payload_length(std::uint64_t n)
  {
    if (!writable_ || n > capacity_) {
      throw Error(Errc::message_too_large, "payload length exceeds message_size");
    }
    length_ = n;
  }

private:
  friend class Publisher;
  friend class Subscriber;

  std::byte * data_ {nullptr};
  std::uint64_t offset_ {0};
  std::uint64_t seq_ {0};
  std::uint64_t publish_ts_ {0};
  std::uint64_t length_ {0};
  std::uint64_t capacity_ {0};
  std::uint32_t index_ {kNoChunk};
  std::uint32_t generation_ {0};
  std::uint32_t slot_ {kNoChunk};
  std::uint32_t owner_id_ {0};
  bool writable_ {false};
};

class Publisher;
class Subscriber;

/// A fixed-message-size topic backed by one shared-memory segment.
class Topic
{
public:
  /// Creates the segment. The creating Topic owns the OS name and unlinks it
  /// when destroyed; handles attached elsewhere keep their mappings.
  static Topic create(const TopicConfig & config)
  {
    if (!valid_topic_name(config.name)) {
      throw Error(Errc::invalid_config, "invalid topic name '" + config.name + "'");
    }
    if (config.message_size == 0) {
      throw Error(Errc::invalid_config, "message_size must be > 0");
    }
    if (config.queue_depth == 0) {
      throw Error(Errc::invalid_config, "queue_depth must be > 0");
    }
    if (config.pool_capacity < kMaxLoans + config.queue_depth ||
      config.pool_capacity >= kNoChunk)
    {
      throw Error(
        Errc::invalid_config, "pool_capacity must be >= " + std::to_string(kMaxLoans) +
        " + queue_depth");
    }
    const Geometry g =
      compute_geometry(config.message_size, config.pool_capacity, config.queue_depth);
    auto shm = SharedMemory::create(segment_name(config.name), g.total_size);
    std::byte * base = shm.data();

    auto seg = std::make_shared<detail::Segment>(std::move(shm));
    seg->set_geometry(g);

    auto & h = *reinterpret_cast<SegmentHeader *>(base);
    h.version = kLayoutVersion;
    h.message_size = config.message_size;
    h.pool_capacity = config.pool_capacity;
    h.queue_depth = config.queue_depth;
    h.max_subscribers = kMaxSubscribers;
    h.max_loans = kMaxLoans;
    h.chunk_table_offset = g.chunk_table_offset;
    h.subscriber_table_offset = g.subscriber_table_offset;
    h.payload_offset = g.payload_offset;
    h.chunk_stride = g.chunk_stride;

    auto * cb = new (base + kControlOffset) ControlBlock;
    init_control_block(*cb);
    cb->next_seq = 0;
    cb->free_head = kNoChunk;
    cb->free_count = 0;
    cb->loans_outstanding = 0;
    cb->publisher_attached = 0;
    cb->live_subscribers = 0;
    cb->next_subscriber_id = 0;

    for (std::uint32_t i = config.pool_capacity; i-- > 0; ) {
      auto & c = seg->chunk(i);
      c = ChunkEntry {};
      c.offset = g.payload_offset + g.chunk_stride * i;
      seg->push_free(i);
    }
    for (std::uint32_t s = 0; s < kMaxSubscribers; ++s) {
      std::memset(&seg->slot(s), 0, g.slot_stride);
    }
    std::memcpy(h.magic, kMagic, sizeof(kMagic));
    cb->initialized.store(1, std::memory_order_release);
    return Topic(std::move(seg), config.name);
  }

  /// Attaches to a topic created by this or another process.
  static Topic open(
    const std::string & name,
    std::chrono::milliseconds init_timeout = std::chrono::milliseconds(1000))
  {
    if (!valid_topic_name(name)) {
      throw Error(Errc::invalid_config, "invalid topic name '" + name + "'");
    }
    auto shm = SharedMemory::open(segment_name(name));
    if (shm.size() < kChunkTableOffset) {
      throw Error(Errc::segment_corrupt, "segment too small");
    }
    auto * cb = reinterpret_cast<ControlBlock *>(shm.data() + kControlOffset);
    const auto deadline = std::chrono::steady_clock::now() + init_timeout;
    while (cb->initialized.load(std::memory_order_acquire) == 0) {
      if (std::chrono::steady_clock::now() > deadline) {
        throw Error(Errc::segment_corrupt, "segment never finished initialising");
      }
      std::this_thread::yield();
    }
    const auto & h = *reinterpret_cast<const SegmentHeader *>(shm.data());
    if (std::memcmp(h.magic, kMagic, sizeof(kMagic)) != 0 || h.version != kLayoutVersion) {
      throw Error(Errc::segment_corrupt, "bad magic or version");
    }
    const Geometry g = compute_geometry(h.message_size, h.pool_capacity, h.queue_depth);
    if (g.total_size != shm.size() || g.payload_offset != h.payload_offset) {
      throw Error(Errc::segment_corrupt, "segment geometry mismatch");
    }
    auto seg = std::make_shared<detail::Segment>(std::move(shm));
    seg->set_geometry(g);
    return Topic(std::move(seg), name);
  }

  const std::string & name() const noexcept {return name_;}
  const std::string & os_name() const noexcept {return seg_->os_name();}
  std::uint64_t message_size() const noexcept {return seg_->geometry().message_size;}
  std::uint32_t pool_capacity() const noexcept {return seg_->geometry().pool_capacity;}
  std::uint32_t queue_depth() const noexcept {return seg_->geometry().queue_depth;}
  std::size_t segment_size() const noexcept {return seg_->geometry().total_size;}

  std::uint32_t free_count() const
  {
    SegmentLock lock(seg_->control());
    return seg_->control().free_count;
  }

  std::uint32_t loans_outstanding() const
  {
    SegmentLock lock(seg_->control());
    return seg_->control().loans_outstanding;
  }

  std::uint32_t subscriber_count() const
  {
    SegmentLock lock(seg_->control());
    return seg_->control().live_subscribers;
  }

  inline Publisher advertise() const;
  inline Subscriber subscribe() const;

private:
  Topic(std::shared_ptr<detail::Segment> seg, std::string name)
  : seg_(std::move(seg)), name_(std::move(name)) {}

  std::shared_ptr<detail::Segment> seg_;
  std::string name_;
};

inline Topic create_topic(const TopicConfig & config) {return Topic::create(config);}

/// The single writer of a topic.
class Publisher
{
public:
  explicit Publisher(std::shared_ptr<detail::Segment> seg)
  : seg_(std::move(seg))
  {
    SegmentLock lock(seg_->control());
    if (seg_->control().publisher_attached != 0) {
      throw Error(Errc::publisher_exists, "topic already has a publisher");
    }
    seg_->control().publisher_attached = 1;
  }

  Publisher(const Publisher &) = delete;
  Publisher & operator=(const Publisher &) = delete;
  Publisher(Publisher && other) noexcept
  : seg_(std::move(other.seg_)) {}
  Publisher & operator=(Publisher && other) noexcept
  {
    if (this != &other) {
      detach();
      seg_ = std::move(other.seg_);
    }
    return *this;
  }
  ~Publisher() {detach();}

  LoanHandle borrow()
  {
    auto & cb = seg_->control();
    SegmentLock lock(cb);
    if (cb.loans_outstanding >= kMaxLoans) {
      throw Error(Errc::loans_exhausted, "publisher already holds 8 loans");
    }
    if (cb.free_count == 0) {
      throw Error(Errc::pool_exhausted, "no free chunk in pool");
    }
    const std::uint32_t i = seg_->pop_free();
    auto & c = seg_->chunk(i);
    c.state = ChunkState::loaned;
    c.refcount = 1;
    ++c.generation;
    ++cb.loans_outstanding;

    LoanHandle h;
    h.data_ = seg_->payload(i);
    h.offset_ = c.offset;
    h.capacity_ = seg_->geometry().message_size;
    h.length_ = h.capacity_;
    h.index_ = i;
    h.generation_ = c.generation;
    h.writable_ = true;
    return h;
  }

  /// Enqueues the chunk by reference on every live subscriber. Payload
  /// writes made before this call are visible to any take that returns it.
  void publish_loaned(const LoanHandle & handle)
  {
    auto & cb = seg_->control();
    SegmentLock lock(cb);
    check_live(handle);
    auto & c = seg_->chunk(handle.index_);
    c.seq = ++cb.next_seq;
    c.publish_timestamp_ns = now_ns();
    c.payload_length = handle.length_;
    c.state = ChunkState::published;
    ++c.generation;
    c.refcount = 0;
    --cb.loans_outstanding;

    const auto qd = seg_->geometry().queue_depth;
    for (std::uint32_t s = 0; s < kMaxSubscribers; ++s) {
      auto & sl = seg_->slot(s);
      if (sl.active == 0) {
        continue;
      }
      if (sl.count == qd) {
        const std::uint32_t oldest = seg_->ring(s)[sl.head];
        sl.head = (sl.head + 1) % qd;
        --sl.count;
        ++sl.dropped;
        seg_->unref(oldest);
      }
      seg_->ring(s)[(sl.head + sl.count) % qd] = handle.index_;
      ++sl.count;
      ++c.refcount;
    }
    if (c.refcount == 0) {
      seg_->push_free(handle.index_);
    }
    lock.notify_all();
  }

  /// Gives a loan back without publishing it.
  void discard(const LoanHandle & handle)
  {
    auto & cb = seg_->control();
    SegmentLock lock(cb);
    check_live(handle);
    ++seg_->chunk(handle.index_).generation;
    --cb.loans_outstanding;
    seg_->push_free(handle.index_);
    lock.notify_all();
  }

  /// Blocks until every live subscriber queue has room, so the next publish
  /// drops nothing. Returns false on timeout.
  bool wait_for_capacity(std::chrono::nanoseconds timeout)
  {
    auto & cb = seg_->control();
    const auto deadline = monotonic_deadline(timeout);
    SegmentLock lock(cb);
    while (!all_queues_have_room()) {
      if (!lock.wait_until(deadline)) {
        return all_queues_have_room();
      }
    }
    return true;
  }

  std::uint32_t loans_outstanding() const
  {
    SegmentLock lock(seg_->control());
    return seg_->control().loans_outstanding;
  }

private:
  void check_live(const LoanHandle & handle) const
  {
    if (!handle.writable_ || handle.index_ >= seg_->geometry().pool_capacity) {
      throw Error(Errc::stale_handle, "not a publisher loan of this topic");
    }
    const auto & c = seg_->chunk(handle.index_);
    if (c.state != ChunkState::loaned || c.generation != handle.generation_ ||
      seg_->payload(handle.index_) != handle.data_)
    {
      throw Error(Errc::stale_handle, "loan already published or returned");
    }
  }

  bool all_queues_have_room() const
  {
    for (std::uint32_t s = 0; s < kMaxSubscribers; ++s) {
      const auto & sl = seg_->slot(s);
      if (sl.active != 0 && sl.count >= seg_->geometry().queue_depth) {
        return false;
      }
    }
    return true;
  }

  void detach() noexcept
  {
    if (!seg_) {
      return;
    }
    try {
      auto & cb = seg_->control();
      SegmentLock lock(cb);
      for (std::uint32_t i = 0; i < seg_->geometry().pool_capacity; ++i) {
        auto & c = seg_->chunk(i);
        if (c.state == ChunkState::loaned) {
          ++c.generation;
          --cb.loans_outstanding;
          seg_->push_free(i);
        }
      }
      cb.publisher_attached = 0;
      lock.notify_all();
    } catch (...) {
    }
    seg_.reset();
  }

  std::shared_ptr<detail::Segment> seg_;
};

/// A reader with its own bounded FIFO. Only messages published after
/// registration are delivered; on overflow the oldest queued message drops.
class Subscriber
{
public:
  explicit Subscriber(std::shared_ptr<detail::Segment> seg)
  : seg_(std::move(seg))
  {
    auto & cb = seg_->control();
    SegmentLock lock(cb);
    if (cb.live_subscribers >= kMaxSubscribers) {
      throw Error(Errc::too_many_subscribers, "topic already has 127 subscriptions");
    }
    for (std::uint32_t s = 0; s < kMaxSubscribers; ++s) {
      auto & sl = seg_->slot(s);
      if (sl.active == 0) {
        std::memset(&sl, 0, seg_->geometry().slot_stride);
        sl.active = 1;
        sl.id = ++cb.next_subscriber_id;
        slot_ = s;
        id_ = sl.id;
        ++cb.live_subscribers;
        return;
      }
    }
    throw Error(Errc::too_many_subscribers, "no free subscriber slot");
  }

  Subscriber(const Subscriber &) = delete;
  Subscriber & operator=(const Subscriber &) = delete;
  Subscriber(Subscriber && other) noexcept
  : seg_(std::move(other.seg_)), slot_(other.slot_), id_(other.id_) {}
  Subscriber & operator=(Subscriber && other) noexcept
  {
    if (this != &other) {
      unsubscribe();
      seg_ = std::move(other.seg_);
      slot_ = other.slot_;
      id_ = other.id_;
    }
    return *this;
  }
  ~Subscriber() {unsubscribe();}

  std::uint32_t id() const noexcept {return id_;}

  /// Oldest queued message, or nullopt when the queue is empty (non-blocking)
  /// or stays empty until the timeout elapses.
  std::optional<LoanHandle> take_loaned(
    bool blocking = false,
    std::chrono::nanoseconds timeout = std::chrono::seconds(1))
  {
    auto & cb = seg_->control();
    const auto deadline = monotonic_deadline(timeout);
    SegmentLock lock(cb);
    auto & sl = seg_->slot(slot_);
    while (sl.count == 0) {
      if (!blocking || !lock.wait_until(deadline)) {
        if (sl.count == 0) {
          return std::nullopt;
        }
        break;
      }
    }
    const auto qd = seg_->geometry().queue_depth;
    const std::uint32_t i = seg_->ring(slot_)[sl.head];
    sl.head = (sl.head + 1) % qd;
    --sl.count;
    ++sl.delivered;
    seg_->held(slot_)[i] = 1;
    lock.notify_all();

    const auto & c = seg_->chunk(i);
    LoanHandle h;
    h.data_ = seg_->payload(i);
    h.offset_ = c.offset;
    h.seq_ = c.seq;
    h.publish_ts_ = c.publish_timestamp_ns;
    h.length_ = c.payload_length;
    h.capacity_ = seg_->geometry().message_size;
    h.index_ = i;
    h.generation_ = c.generation;
    h.slot_ = slot_;
    h.owner_id_ = id_;
    h.writable_ = false;
    return h;
  }

  void return_loaned(const LoanHandle & handle)
  {
    auto & cb = seg_->control();
    SegmentLock lock(cb);
    if (handle.writable_ || handle.slot_ != slot_ || handle.owner_id_ != id_ ||
      handle.index_ >= seg_->geometry().pool_capacity)
    {
      throw Error(Errc::stale_handle, "not a loan taken by this subscriber");
    }
    auto & held = seg_->held(slot_)[handle.index_];
    if (held == 0 || seg_->chunk(handle.index_).generation != handle.generation_) {
      throw Error(Errc::stale_handle, "loan already returned");
    }
    held = 0;
    seg_->unref(handle.index_);
    lock.notify_all();
  }

  std::uint32_t queued() const
  {
    SegmentLock lock(seg_->control());
    return seg_->slot(slot_).count;
  }

  std::uint64_t dropped() const
  {
    SegmentLock lock(seg_->control());
    return seg_->slot(slot_).dropped;
  }

  /// Releases the registration and every chunk still queued or held.
  void unsubscribe() noexcept
  {
    if (!seg_) {
      return;
    }
    try {
      auto & cb = seg_->control();
      SegmentLock lock(cb);
      auto & sl = seg_->slot(slot_);
      if (sl.active != 0 && sl.id == id_) {
        seg_->clear_slot(slot_);
        sl.active = 0;
        --cb.live_subscribers;
      }
      lock.notify_all();
    } catch (...) {
    }
    seg_.reset();
  }

private:
  std::shared_ptr<detail::Segment> seg_;
  std::uint32_t slot_ {0};
  std::uint32_t id_ {0};
};

inline Publisher Topic::advertise() const {return Publisher(seg_);}
inline Subscriber Topic::subscribe() const {return Subscriber(seg_);}

}  // namespace adunit::transport

#endif  // ADUNIT__TRANSPORT__LOANED_HPP_
