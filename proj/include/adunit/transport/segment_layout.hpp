#ifndef ADUNIT__TRANSPORT__SEGMENT_LAYOUT_HPP_
#define ADUNIT__TRANSPORT__SEGMENT_LAYOUT_HPP_

#include <pthread.h>

#include <atomic>
#include <cerrno>
#include <cstddef>
#include <cstdint>
#include <ctime>

#include "adunit/error.hpp"

// Bit-exact layout of a topic segment. See docs/segment_layout.md.
//
//   [0,   64)  SegmentHeader
//   [64, 256)  ControlBlock (process-shared mutex, condition, pool accounting)
//   [256, ...) ChunkEntry[pool_capacity]               (48 bytes each)
//   [..., ...) SubscriberSlot[kMaxSubscribers]         (slot_stride each, 64-aligned)
//   [..., ...) payload area, chunk i at payload_offset + i * chunk_stride

namespace adunit::transport
{

inline constexpr char kMagic[4] = {'A', 'D', 'U', '1'};
inline constexpr std::uint32_t kLayoutVersion = 1;
inline constexpr std::uint32_t kMaxLoans = 8;
inline constexpr std::uint32_t kMaxSubscribers = 127;
inline constexpr std::uint32_t kNoChunk = 0xFFFFFFFFu;
inline constexpr std::size_t kAlign = 64;

constexpr std::size_t align_up(std::size_t v, std::size_t a) noexcept
{
  return (v + a - 1) / a * a;
}

struct SegmentHeader
{
  char magic[4];
  std::uint32_t version;
  std::uint64_t message_size;
  std::uint32_t pool_capacity;
  std::uint32_t queue_depth;
  std::uint32_t max_subscribers;
  std::uint32_t max_loans;
  std::uint64_t chunk_table_offset;
  std::uint64_t subscriber_table_offset;
  std::uint64_t payload_offset;
  std::uint64_t chunk_stride;
};
static_assert(sizeof(SegmentHeader) == 64);

enum class ChunkState : std::uint32_t
{
  free = 0,
  loaned = 1,
  published = 2,
};

struct ChunkEntry
{
  std::uint64_t offset;          // absolute byte offset of the payload in the segment
  std::uint64_t seq;
  std::uint64_t publish_timestamp_ns;
  std::uint64_t payload_length;
  std::uint32_t refcount;
  ChunkState state;
  std::uint32_t next_free;
  std::uint32_t generation;      // bumped on every borrow and publish
};
static_assert(sizeof(ChunkEntry) == 48);

struct ControlBlock
{
  pthread_mutex_t mutex;
  pthread_cond_t changed;
  std::uint64_t next_seq;
  std::uint32_t free_head;
  std::uint32_t free_count;
  std::uint32_t loans_outstanding;
  std::uint32_t publisher_attached;
  std::uint32_t live_subscribers;
  std::uint32_t next_subscriber_id;
  std::atomic<std::uint32_t> initialized;
};
inline constexpr std::size_t kControlOffset = 64;
inline constexpr std::size_t kChunkTableOffset = 256;
static_assert(kControlOffset + sizeof(ControlBlock) <= kChunkTableOffset);
static_assert(std::atomic<std::uint32_t>::is_always_lock_free);

// Followed in memory by: uint32 ring[queue_depth]; uint8 held[pool_capacity].
struct SubscriberSlotHeader
{
  std::uint32_t active;
  std::uint32_t id;
  std::uint32_t head;
  std::uint32_t count;
  std::uint64_t dropped;
  std::uint64_t delivered;
};
static_assert(sizeof(SubscriberSlotHeader) == 32);

struct Geometry
{
  std::uint64_t message_size;
  std::uint32_t pool_capacity;
  std::uint32_t queue_depth;
  std::size_t chunk_table_offset;
  std::size_t subscriber_table_offset;
  std::size_t slot_stride;
  std::size_t payload_offset;
  std::size_t chunk_stride;
  std::size_t total_size;
};

constexpr Geometry compute_geometry(
  std::uint64_t message_size, std::uint32_t pool_capacity, std::uint32_t queue_depth) noexcept
{
  Geometry g {};
  g.message_size = message_size;
  g.pool_capacity = pool_capacity;
  g.queue_depth = queue_depth;
  g.chunk_table_offset = kChunkTableOffset;
  g.subscriber_table_offset =
    align_up(g.chunk_table_offset + sizeof(ChunkEntry) * pool_capacity, kAlign);
  g.slot_stride = align_up(
    sizeof(SubscriberSlotHeader) + sizeof(std::uint32_t) * queue_depth + pool_capacity, kAlign);
  g.payload_offset = align_up(g.subscriber_table_offset + g.slot_stride * kMaxSubscribers, kAlign);
  g.chunk_stride = align_up(message_size, kAlign);
  g.total_size = g.payload_offset + g.chunk_stride * pool_capacity;
  return g;
}

/// RAII lock over the robust process-shared mutex in the control block.
class SegmentLock
{
public:
  explicit SegmentLock(ControlBlock & cb)
  : cb_(cb)
  {
    recover(::pthread_mutex_lock(&cb_.mutex));
  }
  ~SegmentLock() {::pthread_mutex_unlock(&cb_.mutex);}
  SegmentLock(const SegmentLock &) = delete;
  SegmentLock & operator=(const SegmentLock &) = delete;

  // Returns false on timeout.
  bool wait_until(const timespec & deadline)
  {
    const int rc = ::pthread_cond_timedwait(&cb_.changed, &cb_.mutex, &deadline);
    if (rc == ETIMEDOUT) {
      return false;
    }
    recover(rc);
    return true;
  }

  void notify_all() {::pthread_cond_broadcast(&cb_.changed);}

private:
  void recover(int rc)
  {
    // Owner died while holding the lock: take it over as-is.
    if (rc == EOWNERDEAD) {
      ::pthread_mutex_consistent(&cb_.mutex);
    } else if (rc != 0) {
      throw Error(Errc::segment_corrupt, "segment mutex failure");
    }
  }

  ControlBlock & cb_;
};

inline void init_control_block(ControlBlock & cb)
{
  pthread_mutexattr_t ma;
  ::pthread_mutexattr_init(&ma);
  ::pthread_mutexattr_setpshared(&ma, PTHREAD_PROCESS_SHARED);
  ::pthread_mutexattr_setrobust(&ma, PTHREAD_MUTEX_ROBUST);
  ::pthread_mutex_init(&cb.mutex, &ma);
  ::pthread_mutexattr_destroy(&ma);

  pthread_condattr_t ca;
  ::pthread_condattr_init(&ca);
  ::pthread_condattr_setpshared(&ca, PTHREAD_PROCESS_SHARED);
  ::pthread_condattr_setclock(&ca, CLOCK_MONOTONIC);
  ::pthread_cond_init(&cb.changed, &ca);
  ::pthread_condattr_destroy(&ca);
}

}  // namespace adunit::transport

#endif  // ADUNIT__TRANSPORT__SEGMENT_LAYOUT_HPP_
