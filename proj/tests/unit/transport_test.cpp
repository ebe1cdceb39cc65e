#include <sys/mman.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "adunit/transport/loaned.hpp"
#include "test_util.hpp"

using namespace adunit;
using namespace adunit::transport;

namespace
{

Topic make_topic(const std::string & stem, std::uint64_t size = 256, std::uint32_t pool = 24,
  std::uint32_t depth = 8)
{
  return Topic::create({unique_topic(stem), size, pool, depth});
}

template<typename F>
Errc error_of(F && f)
{
  try {
    f();
  } catch (const Error & e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an adunit::Error";
  return Errc::io_error;
}

}  // namespace

TEST(Topic, CreateThenOpenSharesGeometry)
{
  auto t = make_topic("geom", 1000, 20, 4);
  auto o = Topic::open(t.name());
  EXPECT_EQ(o.message_size(), 1000u);
  EXPECT_EQ(o.pool_capacity(), 20u);
  EXPECT_EQ(o.queue_depth(), 4u);
  EXPECT_EQ(o.free_count(), 20u);
}

TEST(Topic, NameCollision)
{
  auto t = make_topic("dup");
  EXPECT_EQ(error_of([&] {Topic::create({t.name(), 64});}), Errc::name_collision);
}

TEST(Topic, OpenMissingSegment)
{
  EXPECT_EQ(error_of([] {Topic::open(unique_topic("missing"));}), Errc::segment_not_found);
}

TEST(Topic, RejectsInvalidConfig)
{
  EXPECT_EQ(error_of([] {Topic::create({unique_topic("z"), 0});}), Errc::invalid_config);
  EXPECT_EQ(error_of([] {Topic::create({unique_topic("p"), 64, 15, 8});}), Errc::invalid_config);
  EXPECT_EQ(error_of([] {Topic::create({unique_topic("q"), 64, 24, 0});}), Errc::invalid_config);
  EXPECT_EQ(error_of([] {Topic::create({"bad/name", 64});}), Errc::invalid_config);
  EXPECT_NO_THROW(Topic::create({unique_topic("min"), 64, 16, 8}));
}

TEST(Topic, OwnerUnlinksName)
{
  std::string name;
  {
    auto t = make_topic("gone");
    name = t.name();
  }
  EXPECT_EQ(error_of([&] {Topic::open(name);}), Errc::segment_not_found);
}

TEST(Topic, SegmentNamespacedByEnvironment)
{
  ::setenv("ADUNIT_SEGMENT_PREFIX", "ci7", 1);
  EXPECT_EQ(segment_name("camera"), "/adunit.ci7.camera");
  ::unsetenv("ADUNIT_SEGMENT_PREFIX");
  EXPECT_EQ(segment_name("camera"), "/adunit.camera");
}

TEST(Topic, HeaderBytesMatchDocumentedLayout)
{
  auto t = make_topic("layout", 1000, 24, 8);
  const int fd = ::shm_open(t.os_name().c_str(), O_RDONLY, 0);
  ASSERT_GE(fd, 0);
  unsigned char buf[64];
  ASSERT_EQ(::pread(fd, buf, sizeof(buf), 0), 64);
  ::close(fd);
  EXPECT_EQ(std::memcmp(buf, "ADU1", 4), 0);
  std::uint32_t version = 0;
  std::uint64_t msg = 0;
  std::uint32_t pool = 0;
  std::memcpy(&version, buf + 4, 4);
  std::memcpy(&msg, buf + 8, 8);
  std::memcpy(&pool, buf + 16, 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(msg, 1000u);
  EXPECT_EQ(pool, 24u);
}

TEST(Publisher, NinthLoanFails)
{
  auto t = make_topic("loans");
  auto pub = t.advertise();
  std::vector<LoanHandle> loans;
  for (int i = 0; i < 8; ++i) {
    loans.push_back(pub.borrow());
  }
  EXPECT_EQ(pub.loans_outstanding(), 8u);
  EXPECT_EQ(error_of([&] {pub.borrow();}), Errc::loans_exhausted);
  pub.publish_loaned(loans.back());
  EXPECT_NO_THROW(loans.back() = pub.borrow());
}

TEST(Publisher, PoolExhaustedWhenSubscribersHoldChunks)
{
  auto t = make_topic("pool", 64, 16, 8);
  auto pub = t.advertise();
  auto sub = t.subscribe();
  std::vector<LoanHandle> held;
  for (int i = 0; i < 8; ++i) {
    pub.publish_loaned(pub.borrow());
    held.push_back(*sub.take_loaned());
  }
  for (int i = 0; i < 8; ++i) {
    pub.publish_loaned(pub.borrow());
  }
  EXPECT_EQ(t.free_count(), 0u);
  EXPECT_EQ(error_of([&] {pub.borrow();}), Errc::pool_exhausted);
  sub.return_loaned(held.front());
  EXPECT_NO_THROW(pub.borrow());
}

TEST(Publisher, SecondPublisherRejected)
{
  auto t = make_topic("pubs");
  {
    auto a = t.advertise();
    EXPECT_EQ(error_of([&] {t.advertise();}), Errc::publisher_exists);
  }
  EXPECT_NO_THROW(t.advertise());
}

TEST(Publisher, DestructionReturnsLoans)
{
  auto t = make_topic("dtor");
  {
    auto pub = t.advertise();
    (void)pub.borrow();
    (void)pub.borrow();
    EXPECT_EQ(t.free_count(), 22u);
  }
  EXPECT_EQ(t.free_count(), 24u);
  EXPECT_EQ(t.loans_outstanding(), 0u);
}

TEST(Publisher, NoSubscribersFreesChunkOnPublish)
{
  auto t = make_topic("nosub");
  auto pub = t.advertise();
  pub.publish_loaned(pub.borrow());
  EXPECT_EQ(t.free_count(), 24u);
}

TEST(Publisher, StaleHandles)
{
  auto t = make_topic("stale");
  auto pub = t.advertise();
  auto sub = t.subscribe();
  auto loan = pub.borrow();
  const auto copy = loan;
  pub.publish_loaned(loan);
  EXPECT_EQ(error_of([&] {pub.publish_loaned(copy);}), Errc::stale_handle);
  EXPECT_EQ(error_of([&] {pub.discard(copy);}), Errc::stale_handle);
  auto got = sub.take_loaned();
  ASSERT_TRUE(got);
  EXPECT_EQ(error_of([&] {pub.publish_loaned(*got);}), Errc::stale_handle);
  EXPECT_EQ(error_of([&] {got->mutable_payload();}), Errc::stale_handle);
  sub.return_loaned(*got);
  EXPECT_EQ(error_of([&] {sub.return_loaned(*got);}), Errc::stale_handle);
  EXPECT_EQ(error_of([&] {sub.return_loaned(pub.borrow());}), Errc::stale_handle);
}

TEST(Publisher, PayloadLengthBoundedByMessageSize)
{
  auto t = make_topic("len", 100);
  auto pub = t.advertise();
  auto loan = pub.borrow();
  EXPECT_EQ(loan.capacity(), 100u);
  EXPECT_EQ(error_of([&] {loan.set_payload_length(101);}), Errc::message_too_large);
  loan.set_payload_length(10);
  auto sub = t.subscribe();
  pub.publish_loaned(loan);
  EXPECT_EQ(sub.take_loaned()->payload().size(), 10u);
}

TEST(Subscriber, Limit127)
{
  auto t = make_topic("subs");
  std::vector<Subscriber> subs;
  for (int i = 0; i < 127; ++i) {
    subs.push_back(t.subscribe());
  }
  EXPECT_EQ(t.subscriber_count(), 127u);
  EXPECT_EQ(error_of([&] {t.subscribe();}), Errc::too_many_subscribers);
  subs.pop_back();
  EXPECT_NO_THROW(subs.push_back(t.subscribe()));
}

TEST(Subscriber, SeesPublisherOffsetAndBytes)
{
  auto t = make_topic("zc", 4096);
  auto pub = t.advertise();
  auto a = t.subscribe();
  auto b = Topic::open(t.name()).subscribe();
  auto loan = pub.borrow();
  auto p = loan.mutable_payload();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<std::byte>(i * 7);
  }
  pub.publish_loaned(loan);
  for (auto * s : {&a, &b}) {
    auto got = s->take_loaned();
    ASSERT_TRUE(got);
    EXPECT_EQ(got->offset(), loan.offset());
    EXPECT_EQ(got->chunk_index(), loan.chunk_index());
    EXPECT_EQ(std::memcmp(got->payload().data(), p.data(), p.size()), 0);
    EXPECT_FALSE(got->writable());
    s->return_loaned(*got);
  }
  EXPECT_EQ(t.free_count(), t.pool_capacity());
}

TEST(Subscriber, FifoAndDropOldest)
{
  auto t = make_topic("fifo", 64, 24, 8);
  auto pub = t.advertise();
  auto sub = t.subscribe();
  for (std::uint8_t i = 1; i <= 10; ++i) {
    auto loan = pub.borrow();
    loan.mutable_payload()[0] = std::byte {i};
    pub.publish_loaned(loan);
  }
  EXPECT_EQ(sub.queued(), 8u);
  EXPECT_EQ(sub.dropped(), 2u);
  std::uint64_t last_seq = 0;
  for (std::uint8_t want = 3; want <= 10; ++want) {
    auto got = sub.take_loaned();
    ASSERT_TRUE(got);
    EXPECT_EQ(got->payload()[0], std::byte {want});
    EXPECT_GT(got->seq(), last_seq);
    last_seq = got->seq();
    sub.return_loaned(*got);
  }
  EXPECT_FALSE(sub.take_loaned());
  EXPECT_EQ(t.free_count(), 24u);
}

TEST(Subscriber, OnlyMessagesAfterSubscription)
{
  auto t = make_topic("late");
  auto pub = t.advertise();
  pub.publish_loaned(pub.borrow());
  auto sub = t.subscribe();
  EXPECT_FALSE(sub.take_loaned());
}

TEST(Subscriber, BlockingTakeTimesOutAndWakes)
{
  auto t = make_topic("block");
  auto pub = t.advertise();
  auto sub = t.subscribe();
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_FALSE(sub.take_loaned(true, std::chrono::milliseconds(50)));
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(45));
  std::thread th([&] {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      pub.publish_loaned(pub.borrow());
    });
  EXPECT_TRUE(sub.take_loaned(true, std::chrono::seconds(5)));
  th.join();
}

TEST(Subscriber, UnsubscribeReleasesQueuedAndHeld)
{
  auto t = make_topic("unsub");
  auto pub = t.advertise();
  {
    auto sub = t.subscribe();
    for (int i = 0; i < 5; ++i) {
      pub.publish_loaned(pub.borrow());
    }
    auto held = sub.take_loaned();
    ASSERT_TRUE(held);
    EXPECT_EQ(t.free_count(), 19u);
  }
  EXPECT_EQ(t.free_count(), 24u);
  EXPECT_EQ(t.subscriber_count(), 0u);
}

TEST(Publisher, ConcurrentBorrowNeverExceedsEightLoans)
{
  auto t = make_topic("race", 64, 32, 8);
  auto pub = t.advertise();
  auto sub = t.subscribe();
  std::atomic<bool> stop {false};
  std::atomic<std::uint32_t> worst {0};
  std::thread monitor([&] {
      while (!stop) {
        const auto n = t.loans_outstanding();
        std::uint32_t w = worst;
        while (n > w && !worst.compare_exchange_weak(w, n)) {
        }
      }
    });
  std::thread drain([&] {
      while (!stop) {
        if (auto h = sub.take_loaned(true, std::chrono::milliseconds(5))) {
          sub.return_loaned(*h);
        }
      }
    });
  std::vector<std::thread> writers;
  std::atomic<int> exhausted {0};
  for (int w = 0; w < 6; ++w) {
    writers.emplace_back([&] {
        for (int i = 0; i < 2000; ++i) {
          std::vector<LoanHandle> mine;
          for (int k = 0; k < 2; ++k) {
            try {
              mine.push_back(pub.borrow());
            } catch (const Error & e) {
              if (e.code() != Errc::loans_exhausted && e.code() != Errc::pool_exhausted) {
                throw;
              }
              ++exhausted;
            }
          }
          if (!mine.empty()) {
            pub.publish_loaned(mine.front());
          }
          if (mine.size() == 2) {
            pub.discard(mine.back());
          }
        }
      });
  }
  for (auto & w : writers) {
    w.join();
  }
  stop = true;
  monitor.join();
  drain.join();
  EXPECT_LE(worst.load(), 8u);
  EXPECT_EQ(t.loans_outstanding(), 0u);
}

// Random operation sequences against an independent model of who references
// which chunk. After every step the pool's free count must equal capacity
// minus the chunks the model says are referenced.
TEST(Transport, RefcountConservationProperty)
{
  for (std::uint32_t seed = 1; seed <= 20; ++seed) {
    std::mt19937 rng(seed);
    const std::uint32_t depth = 2 + seed % 5;
    const std::uint32_t pool = 8 + depth + seed % 7;
    auto t = make_topic("prop", 32, pool, depth);
    auto pub = t.advertise();
    struct ModelSub
    {
      Subscriber sub;
      std::deque<std::uint64_t> queued;
      std::vector<LoanHandle> held;
    };
    std::vector<std::unique_ptr<ModelSub>> subs;
    std::vector<LoanHandle> loans;

    auto referenced = [&] {
        std::set<std::uint64_t> r;
        for (const auto & l : loans) {
          r.insert(l.offset());
        }
        for (const auto & s : subs) {
          r.insert(s->queued.begin(), s->queued.end());
          for (const auto & h : s->held) {
            r.insert(h.offset());
          }
        }
        return r.size();
      };

    for (int step = 0; step < 3000; ++step) {
      const int op = static_cast<int>(rng() % 7);
      if (op == 0) {
        const bool room = loans.size() < 8;
        const bool free = t.free_count() > 0;
        try {
          loans.push_back(pub.borrow());
          ASSERT_TRUE(room && free);
        } catch (const Error & e) {
          ASSERT_EQ(e.code(), room ? Errc::pool_exhausted : Errc::loans_exhausted);
        }
      } else if (op == 1 && !loans.empty()) {
        const auto k = rng() % loans.size();
        pub.publish_loaned(loans[k]);
        for (auto & s : subs) {
          if (s->queued.size() == depth) {
            s->queued.pop_front();
          }
          s->queued.push_back(loans[k].offset());
        }
        loans.erase(loans.begin() + static_cast<long>(k));
      } else if (op == 2 && !loans.empty()) {
        const auto k = rng() % loans.size();
        pub.discard(loans[k]);
        loans.erase(loans.begin() + static_cast<long>(k));
      } else if (op == 3 && !subs.empty()) {
        auto & s = *subs[rng() % subs.size()];
        auto got = s.sub.take_loaned();
        ASSERT_EQ(got.has_value(), !s.queued.empty());
        if (got) {
          ASSERT_EQ(got->offset(), s.queued.front());
          s.queued.pop_front();
          s.held.push_back(*got);
        }
      } else if (op == 4 && !subs.empty()) {
        auto & s = *subs[rng() % subs.size()];
        if (!s.held.empty()) {
          const auto k = rng() % s.held.size();
          s.sub.return_loaned(s.held[k]);
          s.held.erase(s.held.begin() + static_cast<long>(k));
        }
      } else if (op == 5 && subs.size() < 5) {
        subs.push_back(std::make_unique<ModelSub>(ModelSub {t.subscribe(), {}, {}}));
      } else if (op == 6 && !subs.empty() && rng() % 4 == 0) {
        subs.erase(subs.begin() + static_cast<long>(rng() % subs.size()));
      }
      ASSERT_EQ(t.free_count(), pool - referenced()) << "seed " << seed << " step " << step;
      ASSERT_EQ(t.loans_outstanding(), loans.size());
    }
    for (auto & l : loans) {
      pub.discard(l);
    }
    subs.clear();
    EXPECT_EQ(t.free_count(), pool);
  }
}

TEST(Transport, CrossProcessDelivery)
{
  auto t = make_topic("xproc", 1 << 16);
  int ready[2];
  ASSERT_EQ(::pipe(ready), 0);
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid == 0) {
    int code = 0;
    {
      auto topic = Topic::open(t.name());
      auto sub = topic.subscribe();
      char c = 1;
      (void)!::write(ready[1], &c, 1);
      for (std::uint32_t m = 0; m < 50 && code == 0; ++m) {
        auto got = sub.take_loaned(true, std::chrono::seconds(5));
        if (!got || got->payload().size() != (1u << 16)) {
          code = 1;
          break;
        }
        std::uint64_t off = 0;
        std::memcpy(&off, got->payload().data(), 8);
        if (off != got->offset() || got->payload()[100] != static_cast<std::byte>(m)) {
          code = 2;
        }
        sub.return_loaned(*got);
      }
    }
    ::_exit(code);
  }
  char c;
  ASSERT_EQ(::read(ready[0], &c, 1), 1);
  auto pub = t.advertise();
  for (std::uint32_t m = 0; m < 50; ++m) {
    ASSERT_TRUE(pub.wait_for_capacity(std::chrono::seconds(5)));
    auto loan = pub.borrow();
    const std::uint64_t off = loan.offset();
    std::memcpy(loan.mutable_payload().data(), &off, 8);
    std::memset(loan.mutable_payload().data() + 8, static_cast<int>(m), (1 << 16) - 8);
    pub.publish_loaned(loan);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(t.free_count(), t.pool_capacity());
  ::close(ready[0]);
  ::close(ready[1]);
}

TEST(Transport, DeadSubscriberDoesNotBlockPublisher)
{
  auto t = make_topic("crash");
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid == 0) {
    auto topic = Topic::open(t.name());
    auto sub = topic.subscribe();
    // Dies holding nothing but its registration.
    ::_exit(0);
  }
  ::waitpid(pid, nullptr, 0);
  auto pub = t.advertise();
  for (int i = 0; i < 100; ++i) {
    ASSERT_NO_THROW(pub.publish_loaned(pub.borrow()));
  }
}
